//! Scratch-local input cache.
//!
//! Entries are keyed by source path. A cold entry is fetched by exactly one
//! slot while others wait on its condition variable, so concurrent tasks
//! never see a partially written file. Entries in use by a running task are
//! pinned by a refcount; eviction is LRU among unpinned entries.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("input {name}: source {source_path} is missing: {err}")]
    MissingSource { name: String, source_path: String, err: io::Error },
    #[error("input {name}: scratch is full ({needed} bytes needed, capacity {capacity})")]
    ScratchFull { name: String, needed: u64, capacity: u64 },
    #[error("input {name}: staging failed: {err}")]
    Io { name: String, err: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub name: String,
    pub source: PathBuf,
    pub local: PathBuf,
    pub size: u64,
    pub refcount: u32,
}

#[derive(Debug)]
enum Slot {
    Fetching,
    Ready,
    Failed,
}

struct Entry {
    info: CacheEntry,
    last_used: u64,
    slot: Arc<(Mutex<Slot>, Condvar)>,
}

#[derive(Default)]
struct State {
    entries: HashMap<PathBuf, Entry>,
    /// Bytes reserved by ready and in-flight entries.
    total: u64,
    tick: u64,
}

/// A staged input. Cached inputs must be released once the task ends.
#[derive(Debug)]
pub enum Staged {
    Cached { key: PathBuf, local: PathBuf },
    Private { local: PathBuf },
}

impl Staged {
    pub fn local(&self) -> &Path {
        match self {
            Staged::Cached { local, .. } | Staged::Private { local } => local,
        }
    }
}

pub struct Cache {
    dir: PathBuf,
    capacity: u64,
    state: Mutex<State>,
    source_reads: AtomicU64,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>, capacity: u64) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Cache { dir, capacity, state: Mutex::new(State::default()), source_reads: AtomicU64::new(0) })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Number of times any source file has been copied.
    pub fn source_reads(&self) -> u64 {
        self.source_reads.load(Ordering::Relaxed)
    }

    pub fn cached_bytes(&self) -> u64 {
        self.state.lock().unwrap().total
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        let st = self.state.lock().unwrap();
        let mut v: Vec<_> = st.entries.values().map(|e| e.info.clone()).collect();
        v.sort_by(|a, b| a.source.cmp(&b.source));
        v
    }

    fn local_path(&self, source: &Path) -> PathBuf {
        let digest = Sha256::digest(source.as_os_str().as_encoded_bytes());
        self.dir.join(hex::encode(&digest[..16]))
    }

    fn copy_source(&self, name: &str, source: &Path, dest: &Path) -> Result<u64, CacheError> {
        let n = fs::copy(source, dest).map_err(|err| {
            if err.kind() == io::ErrorKind::NotFound {
                CacheError::MissingSource { name: name.into(), source_path: source.display().to_string(), err }
            } else {
                CacheError::Io { name: name.into(), err }
            }
        })?;
        self.source_reads.fetch_add(1, Ordering::Relaxed);
        Ok(n)
    }

    /// Copies `source` to `private_dest` (non-cacheable, or cache disabled),
    /// or returns the shared local copy, fetching it on a miss.
    pub fn fetch(&self, name: &str, source: &Path, cacheable: bool, private_dest: &Path) -> Result<Staged, CacheError> {
        if !cacheable || self.capacity == 0 {
            self.copy_source(name, source, private_dest)?;
            return Ok(Staged::Private { local: private_dest.to_path_buf() });
        }
        loop {
            let (slot, owner) = {
                let mut st = self.state.lock().unwrap();
                st.tick += 1;
                let tick = st.tick;
                match st.entries.get_mut(source) {
                    Some(e) => {
                        e.info.refcount += 1;
                        e.last_used = tick;
                        (e.slot.clone(), false)
                    }
                    None => {
                        let slot = Arc::new((Mutex::new(Slot::Fetching), Condvar::new()));
                        let info = CacheEntry {
                            name: name.into(),
                            source: source.to_path_buf(),
                            local: self.local_path(source),
                            size: 0,
                            refcount: 1,
                        };
                        st.entries.insert(source.to_path_buf(), Entry { info, last_used: tick, slot: slot.clone() });
                        (slot, true)
                    }
                }
            };
            if owner {
                return self.fill(name, source, private_dest, &slot);
            }
            let (lock, cv) = &*slot;
            let mut s = lock.lock().unwrap();
            while matches!(*s, Slot::Fetching) {
                s = cv.wait(s).unwrap();
            }
            if matches!(*s, Slot::Ready) {
                let local = self.local_path(source);
                return Ok(Staged::Cached { key: source.to_path_buf(), local });
            }
            // The owner failed and removed the entry; retry as a fresh miss.
            drop(s);
        }
    }

    fn fill(
        &self,
        name: &str,
        source: &Path,
        private_dest: &Path,
        slot: &Arc<(Mutex<Slot>, Condvar)>,
    ) -> Result<Staged, CacheError> {
        let finish = |ok: bool| {
            let (lock, cv) = &**slot;
            *lock.lock().unwrap() = if ok { Slot::Ready } else { Slot::Failed };
            cv.notify_all();
        };
        let abandon = |reserved: u64| {
            let mut st = self.state.lock().unwrap();
            st.entries.remove(source);
            st.total -= reserved;
        };

        let size = match fs::metadata(source) {
            Ok(m) => m.len(),
            Err(err) => {
                abandon(0);
                finish(false);
                return Err(if err.kind() == io::ErrorKind::NotFound {
                    CacheError::MissingSource { name: name.into(), source_path: source.display().to_string(), err }
                } else {
                    CacheError::Io { name: name.into(), err }
                });
            }
        };
        if size > self.capacity {
            // Never fits; stage privately instead of failing the task.
            abandon(0);
            finish(false);
            self.copy_source(name, source, private_dest)?;
            return Ok(Staged::Private { local: private_dest.to_path_buf() });
        }
        {
            let mut st = self.state.lock().unwrap();
            while st.total + size > self.capacity {
                let victim = st
                    .entries
                    .iter()
                    .filter(|(_, e)| e.info.refcount == 0)
                    .min_by_key(|(_, e)| e.last_used)
                    .map(|(k, _)| k.clone());
                let Some(k) = victim else { break };
                let e = st.entries.remove(&k).expect("victim present");
                st.total -= e.info.size;
                // Removed under the lock so a re-fetch cannot race the unlink.
                let _ = fs::remove_file(&e.info.local);
            }
            if st.total + size > self.capacity {
                let total = st.total;
                drop(st);
                abandon(0);
                finish(false);
                log::warn!("cache full: {total} bytes pinned, {size} needed for {}", source.display());
                return Err(CacheError::ScratchFull { name: name.into(), needed: size, capacity: self.capacity });
            }
            st.total += size;
            if let Some(e) = st.entries.get_mut(source) {
                e.info.size = size;
            }
        }

        let local = self.local_path(source);
        let tmp = local.with_extension("part");
        let copied = self.copy_source(name, source, &tmp).and_then(|n| {
            fs::rename(&tmp, &local).map_err(|err| CacheError::Io { name: name.into(), err })?;
            Ok(n)
        });
        match copied {
            Ok(n) => {
                if n != size {
                    let mut st = self.state.lock().unwrap();
                    st.total = st.total - size + n;
                    if let Some(e) = st.entries.get_mut(source) {
                        e.info.size = n;
                    }
                }
                finish(true);
                Ok(Staged::Cached { key: source.to_path_buf(), local })
            }
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                abandon(size);
                finish(false);
                Err(e)
            }
        }
    }

    /// Unpins an entry returned by [`Cache::fetch`].
    pub fn release(&self, staged: &Staged) {
        if let Staged::Cached { key, .. } = staged {
            let mut st = self.state.lock().unwrap();
            if let Some(e) = st.entries.get_mut(key) {
                e.info.refcount = e.info.refcount.saturating_sub(1);
            }
        }
    }
}
