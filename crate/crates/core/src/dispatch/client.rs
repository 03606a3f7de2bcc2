use std::io::{self, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::scheduler::{DispatcherStatus, RunStatus};
use crate::proto::{encode_frame_into, Body, FrameReader, SubmitStatus, TaskId, TaskSpec, WireMessage, DEFAULT_MAX_FRAME};

/// Specs per Submit frame; keeps frames far below the size limit for
/// ordinary task descriptions.
const SUBMIT_CHUNK: usize = 2000;
const SUBMIT_CHUNK_BYTES: usize = 4 << 20;

/// Rough encoded size of a spec.
fn spec_size(s: &TaskSpec) -> usize {
    let refs: usize = s.inputs.iter().map(|i| i.name.len() + i.source.len() + 9).sum::<usize>()
        + s.outputs.iter().map(|o| o.name.len() + o.dest.len() + 8).sum::<usize>();
    32 + s.command.len() + s.payload.len() + refs
}

/// Synchronous client connection to a dispatcher.
pub struct Client {
    out: BufWriter<TcpStream>,
    reader: FrameReader<TcpStream>,
    buf: Vec<u8>,
}

fn proto_err(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = FrameReader::new(stream.try_clone()?);
        Ok(Client { out: BufWriter::new(stream), reader, buf: Vec::new() })
    }

    /// Retries `connect` until it succeeds or `timeout` elapses.
    pub fn connect_retry(addr: &str, timeout: Duration) -> io::Result<Self> {
        let deadline = Instant::now() + timeout;
        loop {
            match Self::connect(addr) {
                Ok(c) => return Ok(c),
                Err(e) if Instant::now() >= deadline => return Err(e),
                Err(_) => std::thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.reader.get_ref().set_read_timeout(t)
    }

    fn send(&mut self, body: Body) -> io::Result<()> {
        self.buf.clear();
        encode_frame_into(&WireMessage::new(0, body), DEFAULT_MAX_FRAME, &mut self.buf).map_err(crate::proto::to_io)?;
        self.out.write_all(&self.buf)?;
        self.out.flush()
    }

    fn recv(&mut self) -> io::Result<Body> {
        match self.reader.read_message()? {
            Some(m) => match m.body {
                Body::Ack { status, message } if status != 0 => Err(proto_err(format!("dispatcher refused: {message}"))),
                b => Ok(b),
            },
            None => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "dispatcher closed the connection")),
        }
    }

    pub fn hello(&mut self, run_id: &str) -> io::Result<()> {
        self.send(Body::ClientHello { run_id: run_id.into() })?;
        match self.recv()? {
            Body::Ack { .. } => Ok(()),
            other => Err(proto_err(format!("unexpected reply {:?}", other.kind()))),
        }
    }

    /// Submits `specs` in order, chunked across frames.
    pub fn submit(&mut self, run_id: &str, specs: &[TaskSpec]) -> io::Result<Vec<(TaskId, SubmitStatus)>> {
        let mut all = Vec::with_capacity(specs.len());
        let mut start = 0;
        while start < specs.len() {
            let mut end = start;
            let mut bytes = 0;
            while end < specs.len() && end - start < SUBMIT_CHUNK && (end == start || bytes < SUBMIT_CHUNK_BYTES) {
                bytes += spec_size(&specs[end]);
                end += 1;
            }
            self.send(Body::Submit { run_id: run_id.into(), specs: specs[start..end].to_vec() })?;
            match self.recv()? {
                Body::SubmitReply { entries } => all.extend(entries),
                other => return Err(proto_err(format!("unexpected reply {:?}", other.kind()))),
            }
            start = end;
        }
        Ok(all)
    }

    pub fn resume(&mut self, run_id: &str) -> io::Result<Vec<(TaskId, SubmitStatus)>> {
        self.send(Body::Resume { run_id: run_id.into() })?;
        match self.recv()? {
            Body::SubmitReply { entries } => Ok(entries),
            other => Err(proto_err(format!("unexpected reply {:?}", other.kind()))),
        }
    }

    /// Dispatcher-wide status; `run_id` selects a run (empty for none).
    pub fn status(&mut self, run_id: &str) -> io::Result<DispatcherStatus> {
        self.send(Body::StatusQuery { run_id: run_id.into() })?;
        match self.recv()? {
            Body::Status { json } => serde_json::from_str(&json).map_err(|e| proto_err(e.to_string())),
            other => Err(proto_err(format!("unexpected reply {:?}", other.kind()))),
        }
    }

    /// Polls until every task of the run is done or permanently failed.
    pub fn wait(
        &mut self,
        run_id: &str,
        poll: Duration,
        timeout: Option<Duration>,
        mut progress: impl FnMut(&RunStatus),
    ) -> io::Result<RunStatus> {
        let start = Instant::now();
        loop {
            let st = self.status(run_id)?;
            let run = st.run.ok_or_else(|| proto_err(format!("dispatcher does not know run {run_id}")))?;
            progress(&run);
            if run.complete {
                return Ok(run);
            }
            if timeout.is_some_and(|t| start.elapsed() >= t) {
                return Err(io::Error::new(io::ErrorKind::TimedOut, format!("run {run_id} not complete")));
            }
            std::thread::sleep(poll);
        }
    }
}
