#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, ChildStdout, Command, Output, Stdio};
use std::time::{Duration, Instant};

pub const BIN: &str = env!("CARGO_BIN_EXE_manytask");

pub fn cmd() -> Command {
    let mut c = Command::new(BIN);
    c.env_remove("MANYTASK_ADDRESS").env_remove("MANYTASK_LOG_DIR").env_remove("MANYTASK_CONFIG");
    c
}

pub fn run(args: &[&str]) -> Output {
    cmd().args(args).stdin(Stdio::null()).output().expect("run manytask")
}

pub fn stdout_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stdout);
    let last = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&o.stderr)));
    serde_json::from_str(last).unwrap()
}

/// Child process killed on drop.
pub struct Proc {
    pub child: Child,
    pub out: Option<BufReader<ChildStdout>>,
}

impl Proc {
    pub fn spawn(args: &[&str]) -> Proc {
        let mut child = cmd()
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn manytask");
        let out = child.stdout.take().map(BufReader::new);
        Proc { child, out }
    }

    pub fn read_json_line(&mut self) -> serde_json::Value {
        let mut line = String::new();
        self.out.as_mut().unwrap().read_line(&mut line).unwrap();
        serde_json::from_str(&line).unwrap_or_else(|e| panic!("bad line {line:?}: {e}"))
    }

    pub fn pid(&self) -> i32 {
        self.child.id() as i32
    }

    pub fn signal(&self, sig: i32) {
        unsafe {
            libc::kill(self.pid(), sig);
        }
    }

    pub fn wait_exit(&mut self, timeout: Duration) -> Option<std::process::ExitStatus> {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if let Some(st) = self.child.try_wait().unwrap() {
                return Some(st);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        None
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

pub fn serve(addr: &str, log_dir: &Path) -> Proc {
    let mut p = Proc::spawn(&["serve", "--address", addr, "--log-dir", log_dir.to_str().unwrap()]);
    let hello = p.read_json_line();
    assert_eq!(hello["address"], addr);
    p
}

pub fn worker(addr: &str, id: u64, scratch: &Path, exec: &str) -> Proc {
    Proc::spawn(&[
        "worker",
        "--dispatcher",
        addr,
        "--worker-id",
        &id.to_string(),
        "--scratch-dir",
        scratch.to_str().unwrap(),
        "--exec",
        exec,
    ])
}

pub fn wait_workers(addr: &str, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let o = run(&["status", "--dispatcher", addr]);
        if o.status.success() {
            let st = stdout_json(&o);
            let live = st["workers"].as_array().unwrap().iter().filter(|w| w["status"] != "lost").count();
            if live >= n {
                return;
            }
        }
        assert!(Instant::now() < deadline, "workers did not register");
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Direct children of `pid`, from /proc.
pub fn children(pid: i32) -> Vec<i32> {
    let mut out = Vec::new();
    for e in std::fs::read_dir("/proc").unwrap().flatten() {
        let Ok(p) = e.file_name().to_string_lossy().parse::<i32>() else { continue };
        let Ok(stat) = std::fs::read_to_string(format!("/proc/{p}/stat")) else { continue };
        // the ppid follows the parenthesized command name
        let rest = &stat[stat.rfind(')').unwrap() + 2..];
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.get(1).and_then(|f| f.parse::<i32>().ok()) == Some(pid) && fields[0] != "Z" {
            out.push(p);
        }
    }
    out
}

pub fn alive(pid: i32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => {
            let rest = &stat[stat.rfind(')').unwrap() + 2..];
            !rest.starts_with('Z')
        }
        Err(_) => false,
    }
}
