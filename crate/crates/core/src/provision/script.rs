use std::collections::HashMap;
use std::io;
use std::process::Command;
use std::time::Duration;

use super::ProvisionProvider;

/// Provider that delegates to user commands, the hook for a batch-system
/// submission script.
///
/// Both commands run under `sh -c` with `MANYTASK_DISPATCHER`,
/// `MANYTASK_BLOCK_SIZE`, `MANYTASK_BLOCK_INDEX` and `MANYTASK_WORKER_ID`
/// set. The start command must launch one worker with that id and
/// `MANYTASK_BLOCK_SIZE` cores, and exit 0 only once it is launched. The stop
/// command also sees `MANYTASK_GRACEFUL` (1 or 0).
pub struct ScriptProvider {
    block_size: u32,
    start_cmd: String,
    stop_cmd: String,
    blocks: HashMap<u32, (u64, String)>,
}

impl ScriptProvider {
    pub fn new(block_size: u32, start_cmd: impl Into<String>, stop_cmd: impl Into<String>) -> Self {
        ScriptProvider { block_size, start_cmd: start_cmd.into(), stop_cmd: stop_cmd.into(), blocks: HashMap::new() }
    }

    fn run(&self, script: &str, index: u32, id: u64, dispatcher: &str, graceful: Option<bool>) -> io::Result<()> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(script)
            .env("MANYTASK_DISPATCHER", dispatcher)
            .env("MANYTASK_BLOCK_SIZE", self.block_size.to_string())
            .env("MANYTASK_BLOCK_INDEX", index.to_string())
            .env("MANYTASK_WORKER_ID", id.to_string());
        if let Some(g) = graceful {
            cmd.env("MANYTASK_GRACEFUL", if g { "1" } else { "0" });
        }
        let status = cmd.status()?;
        if status.success() {
            Ok(())
        } else {
            Err(io::Error::other(format!("{script:?} exited with {status}")))
        }
    }
}

impl ProvisionProvider for ScriptProvider {
    fn name(&self) -> &str {
        "script"
    }

    fn block_size(&self) -> u32 {
        self.block_size
    }

    fn start_block(&mut self, index: u32, dispatcher: &str) -> io::Result<Vec<u64>> {
        let id = rand::random::<u64>().max(1);
        if let Err(e) = self.run(&self.start_cmd, index, id, dispatcher, None) {
            // the script may have launched something before failing
            let _ = self.run(&self.stop_cmd, index, id, dispatcher, Some(false));
            return Err(e);
        }
        self.blocks.insert(index, (id, dispatcher.to_string()));
        Ok(vec![id])
    }

    fn stop_block(&mut self, index: u32, graceful: bool, _timeout: Duration) -> io::Result<()> {
        match self.blocks.remove(&index) {
            Some((id, dispatcher)) => self.run(&self.stop_cmd, index, id, &dispatcher, Some(graceful)),
            None => Ok(()),
        }
    }

    fn live_workers(&mut self) -> usize {
        self.blocks.len()
    }
}
