//! Frame layout: `len: u32 LE | kind: u8 | sender_id: u64 LE | body`, where
//! `len` counts kind, sender id and body. Variable-length fields inside a
//! body are prefixed with a `u32 LE` length or element count.

use std::io::{self, Read, Write};

use super::message::*;
use super::ProtoError;

pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;
pub const LEN_PREFIX: usize = 4;
/// Kind byte plus sender id.
pub const HEADER_LEN: usize = 9;

#[derive(Debug, PartialEq, Eq)]
pub enum Decoded<'a> {
    Message { msg: WireMessage, rest: &'a [u8] },
    NeedMoreBytes,
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, ProtoError> {
    let mut out = Vec::with_capacity(64);
    encode_frame_into(msg, DEFAULT_MAX_FRAME, &mut out)?;
    Ok(out)
}

/// Appends one frame to `out`. On error `out` is left as it was.
pub fn encode_frame_into(msg: &WireMessage, max_frame: usize, out: &mut Vec<u8>) -> Result<(), ProtoError> {
    let start = out.len();
    out.extend_from_slice(&[0u8; LEN_PREFIX]);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&msg.sender_id.to_le_bytes());
    if let Err(e) = encode_body(&msg.body, out) {
        out.truncate(start);
        return Err(e);
    }
    let len = out.len() - start - LEN_PREFIX;
    if len > max_frame || len > u32::MAX as usize {
        out.truncate(start);
        return Err(ProtoError::FrameTooLarge { len, max: max_frame });
    }
    out[start..start + LEN_PREFIX].copy_from_slice(&(len as u32).to_le_bytes());
    Ok(())
}

pub fn decode_frame(bytes: &[u8]) -> Result<Decoded<'_>, ProtoError> {
    decode_frame_with_max(bytes, DEFAULT_MAX_FRAME)
}

pub fn decode_frame_with_max(bytes: &[u8], max_frame: usize) -> Result<Decoded<'_>, ProtoError> {
    if bytes.len() < LEN_PREFIX {
        return Ok(Decoded::NeedMoreBytes);
    }
    let len = u32::from_le_bytes(bytes[..LEN_PREFIX].try_into().expect("4 bytes")) as usize;
    if len > max_frame {
        return Err(ProtoError::FrameTooLarge { len, max: max_frame });
    }
    if len < HEADER_LEN {
        return Err(ProtoError::Malformed(format!("frame length {len} shorter than header")));
    }
    // the kind byte is checked as soon as it is visible so garbage fails fast
    if bytes.len() > LEN_PREFIX && MessageKind::from_code(bytes[LEN_PREFIX]).is_none() {
        return Err(ProtoError::UnknownKind(bytes[LEN_PREFIX]));
    }
    if bytes.len() < LEN_PREFIX + len {
        return Ok(Decoded::NeedMoreBytes);
    }
    let frame = &bytes[LEN_PREFIX..LEN_PREFIX + len];
    let kind = MessageKind::from_code(frame[0]).ok_or(ProtoError::UnknownKind(frame[0]))?;
    let sender_id = u64::from_le_bytes(frame[1..HEADER_LEN].try_into().expect("8 bytes"));
    let mut r = Reader { buf: &frame[HEADER_LEN..] };
    let body = decode_body(kind, &mut r)?;
    if !r.buf.is_empty() {
        return Err(ProtoError::Malformed(format!("{} trailing bytes in {kind:?} body", r.buf.len())));
    }
    Ok(Decoded::Message { msg: WireMessage { sender_id, body }, rest: &bytes[LEN_PREFIX + len..] })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<(), ProtoError> {
    let n = u32::try_from(n).map_err(|_| ProtoError::FrameTooLarge { len: n, max: u32::MAX as usize })?;
    put_u32(out, n);
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<(), ProtoError> {
    put_len(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

fn put_spec(out: &mut Vec<u8>, s: &TaskSpec) -> Result<(), ProtoError> {
    s.validate()?;
    out.extend_from_slice(&s.id.0);
    put_bytes(out, &s.command)?;
    put_bytes(out, &s.payload)?;
    put_len(out, s.inputs.len())?;
    for i in &s.inputs {
        put_bytes(out, i.name.as_bytes())?;
        put_bytes(out, i.source.as_bytes())?;
        out.push(i.cacheable as u8);
    }
    put_len(out, s.outputs.len())?;
    for o in &s.outputs {
        put_bytes(out, o.name.as_bytes())?;
        put_bytes(out, o.dest.as_bytes())?;
    }
    Ok(())
}

fn encode_body(body: &Body, out: &mut Vec<u8>) -> Result<(), ProtoError> {
    match body {
        Body::Register { cores, mode, prefetch } => {
            put_u32(out, *cores);
            out.push(match mode {
                DispatchMode::Push => 0,
                DispatchMode::Pull => 1,
            });
            put_u32(out, *prefetch);
        }
        Body::TaskDispatch(spec) => put_spec(out, spec)?,
        Body::TaskBundle(specs) => {
            put_len(out, specs.len())?;
            for s in specs {
                put_spec(out, s)?;
            }
        }
        Body::Result(r) => {
            r.validate()?;
            out.extend_from_slice(&r.task_id.0);
            out.extend_from_slice(&r.exit_code.to_le_bytes());
            out.push(r.error_class.code());
            out.extend_from_slice(&r.worker_id.to_le_bytes());
            out.extend_from_slice(&r.dispatched.to_le_bytes());
            out.extend_from_slice(&r.started.to_le_bytes());
            out.extend_from_slice(&r.finished.to_le_bytes());
            put_bytes(out, r.detail.as_bytes())?;
        }
        Body::Heartbeat { running } => {
            for id in running {
                out.extend_from_slice(&id.0);
            }
        }
        Body::Suspend | Body::Shutdown => {}
        Body::Ack { status, message } => {
            out.push(*status);
            put_bytes(out, message.as_bytes())?;
        }
        Body::ClientHello { run_id } | Body::StatusQuery { run_id } | Body::Resume { run_id } => {
            put_bytes(out, run_id.as_bytes())?
        }
        Body::Submit { run_id, specs } => {
            put_bytes(out, run_id.as_bytes())?;
            put_len(out, specs.len())?;
            for s in specs {
                put_spec(out, s)?;
            }
        }
        Body::Status { json } => put_bytes(out, json.as_bytes())?,
        Body::TaskRequest { max_tasks } => put_u32(out, *max_tasks),
        Body::SubmitReply { entries } => {
            put_len(out, entries.len())?;
            for (id, st) in entries {
                out.extend_from_slice(&id.0);
                out.push(st.code());
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtoError> {
        if self.buf.len() < n {
            return Err(ProtoError::Malformed(format!("body truncated: need {n}, have {}", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ProtoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ProtoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn i32(&mut self) -> Result<i32, ProtoError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn id(&mut self) -> Result<TaskId, ProtoError> {
        Ok(TaskId(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, ProtoError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    fn string(&mut self) -> Result<String, ProtoError> {
        String::from_utf8(self.bytes()?).map_err(|_| ProtoError::Malformed("string is not UTF-8".into()))
    }

    fn bool(&mut self) -> Result<bool, ProtoError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(ProtoError::Malformed(format!("bool byte {b}"))),
        }
    }

    /// Element count, checked against the bytes left so corrupt counts
    /// cannot trigger huge allocations.
    fn count(&mut self, min_elem: usize) -> Result<usize, ProtoError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.buf.len() {
            return Err(ProtoError::Malformed(format!("count {n} exceeds remaining body")));
        }
        Ok(n)
    }

    fn spec(&mut self) -> Result<TaskSpec, ProtoError> {
        let id = self.id()?;
        let command = self.bytes()?;
        let payload = self.bytes()?;
        let n_in = self.count(9)?;
        let mut inputs = Vec::with_capacity(n_in);
        for _ in 0..n_in {
            inputs.push(InputRef { name: self.string()?, source: self.string()?, cacheable: self.bool()? });
        }
        let n_out = self.count(8)?;
        let mut outputs = Vec::with_capacity(n_out);
        for _ in 0..n_out {
            outputs.push(OutputRef { name: self.string()?, dest: self.string()? });
        }
        let spec = TaskSpec { id, command, payload, inputs, outputs };
        spec.validate()?;
        Ok(spec)
    }

    fn specs(&mut self) -> Result<Vec<TaskSpec>, ProtoError> {
        // id + command len + command byte + payload len + two counts
        let n = self.count(16 + 4 + 1 + 4 + 4 + 4)?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.spec()?);
        }
        Ok(v)
    }
}

fn decode_body(kind: MessageKind, r: &mut Reader<'_>) -> Result<Body, ProtoError> {
    Ok(match kind {
        MessageKind::Register => {
            let cores = r.u32()?;
            let mode = match r.u8()? {
                0 => DispatchMode::Push,
                1 => DispatchMode::Pull,
                m => return Err(ProtoError::Malformed(format!("dispatch mode byte {m}"))),
            };
            Body::Register { cores, mode, prefetch: r.u32()? }
        }
        MessageKind::TaskDispatch => Body::TaskDispatch(r.spec()?),
        MessageKind::TaskBundle => Body::TaskBundle(r.specs()?),
        MessageKind::Result => {
            let task_id = r.id()?;
            let exit_code = r.i32()?;
            let code = r.u8()?;
            let error_class =
                ErrorClass::from_code(code).ok_or_else(|| ProtoError::Malformed(format!("error class {code}")))?;
            let res = TaskResult {
                task_id,
                exit_code,
                error_class,
                worker_id: r.u64()?,
                dispatched: r.u64()?,
                started: r.u64()?,
                finished: r.u64()?,
                detail: r.string()?,
            };
            res.validate()?;
            Body::Result(res)
        }
        MessageKind::Heartbeat => {
            if r.buf.len() % 16 != 0 {
                return Err(ProtoError::Malformed("heartbeat body is not a list of task ids".into()));
            }
            let mut running = Vec::with_capacity(r.buf.len() / 16);
            while !r.buf.is_empty() {
                running.push(r.id()?);
            }
            Body::Heartbeat { running }
        }
        MessageKind::Suspend => Body::Suspend,
        MessageKind::Shutdown => Body::Shutdown,
        MessageKind::Ack => Body::Ack { status: r.u8()?, message: r.string()? },
        MessageKind::ClientHello => Body::ClientHello { run_id: r.string()? },
        MessageKind::Submit => Body::Submit { run_id: r.string()?, specs: r.specs()? },
        MessageKind::StatusQuery => Body::StatusQuery { run_id: r.string()? },
        MessageKind::Status => Body::Status { json: r.string()? },
        MessageKind::TaskRequest => Body::TaskRequest { max_tasks: r.u32()? },
        MessageKind::Resume => Body::Resume { run_id: r.string()? },
        MessageKind::SubmitReply => {
            let n = r.count(17)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let id = r.id()?;
                let code = r.u8()?;
                let st = SubmitStatus::from_code(code)
                    .ok_or_else(|| ProtoError::Malformed(format!("submit status {code}")))?;
                entries.push((id, st));
            }
            Body::SubmitReply { entries }
        }
    })
}

/// Buffered frame reader over a byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    start: usize,
    max_frame: usize,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self::with_max(inner, DEFAULT_MAX_FRAME)
    }

    pub fn with_max(inner: R, max_frame: usize) -> Self {
        FrameReader { inner, buf: Vec::with_capacity(64 * 1024), start: 0, max_frame }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// Decodes every complete frame already buffered into `out`.
    fn drain(&mut self, out: &mut Vec<WireMessage>) -> io::Result<()> {
        loop {
            match decode_frame_with_max(&self.buf[self.start..], self.max_frame).map_err(to_io)? {
                Decoded::Message { msg, rest } => {
                    self.start = self.buf.len() - rest.len();
                    out.push(msg);
                }
                Decoded::NeedMoreBytes => break,
            }
        }
        if self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        } else if self.start > 0 && self.start * 2 > self.buf.capacity() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        Ok(())
    }

    fn fill(&mut self) -> io::Result<usize> {
        let old = self.buf.len();
        let want = (64 * 1024).max(self.pending_frame_len().saturating_sub(old - self.start));
        self.buf.resize(old + want, 0);
        let n = loop {
            match self.inner.read(&mut self.buf[old..]) {
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                r => break r,
            }
        };
        self.buf.truncate(old + *n.as_ref().unwrap_or(&0));
        n
    }

    fn pending_frame_len(&self) -> usize {
        let avail = &self.buf[self.start..];
        if avail.len() < LEN_PREFIX {
            return 0;
        }
        LEN_PREFIX + u32::from_le_bytes(avail[..LEN_PREFIX].try_into().expect("4 bytes")) as usize
    }

    /// Blocks until at least one message is available, then returns every
    /// complete message buffered. An empty batch means clean end of stream.
    pub fn read_batch(&mut self, out: &mut Vec<WireMessage>) -> io::Result<()> {
        let before = out.len();
        loop {
            self.drain(out)?;
            if out.len() > before {
                return Ok(());
            }
            if self.fill()? == 0 {
                if self.start < self.buf.len() {
                    return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "stream ended inside a frame"));
                }
                return Ok(());
            }
        }
    }

    /// Next message, or `None` at clean end of stream.
    pub fn read_message(&mut self) -> io::Result<Option<WireMessage>> {
        loop {
            if let Decoded::Message { msg, rest } =
                decode_frame_with_max(&self.buf[self.start..], self.max_frame).map_err(to_io)?
            {
                self.start = self.buf.len() - rest.len();
                return Ok(Some(msg));
            }
            if self.start > 0 {
                self.buf.drain(..self.start);
                self.start = 0;
            }
            if self.fill()? == 0 {
                if !self.buf.is_empty() {
                    return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "stream ended inside a frame"));
                }
                return Ok(None);
            }
        }
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> io::Result<()> {
    let frame = encode_frame(msg).map_err(to_io)?;
    w.write_all(&frame)
}

pub fn to_io(e: ProtoError) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_is_thirteen_bytes() {
        let f = encode_frame(&WireMessage::new(7, Body::Heartbeat { running: vec![] })).unwrap();
        assert_eq!(f.len(), 13);
        assert_eq!(&f[..4], &9u32.to_le_bytes());
        assert_eq!(f[4], 0x05);
        assert_eq!(&f[5..13], &7u64.to_le_bytes());
    }

    #[test]
    fn dispatch_carries_command_verbatim() {
        let spec = TaskSpec::new(TaskId([1; 16]), "/bin/sleep 0");
        let f = encode_frame(&WireMessage::new(0, Body::TaskDispatch(spec))).unwrap();
        let body = &f[13..];
        assert_eq!(&body[16..20], &12u32.to_le_bytes());
        assert_eq!(&body[20..32], b"/bin/sleep 0");
    }

    #[test]
    fn partial_input_needs_more() {
        let f = encode_frame(&WireMessage::new(1, Body::Suspend)).unwrap();
        for cut in 0..f.len() {
            assert_eq!(decode_frame(&f[..cut]).unwrap(), Decoded::NeedMoreBytes, "cut {cut}");
        }
    }

    #[test]
    fn concatenated_frames_split_cleanly() {
        let a = WireMessage::new(1, Body::TaskRequest { max_tasks: 3 });
        let b = WireMessage::new(2, Body::Ack { status: 0, message: "ok".into() });
        let mut buf = encode_frame(&a).unwrap();
        let fb = encode_frame(&b).unwrap();
        buf.extend_from_slice(&fb);
        match decode_frame(&buf).unwrap() {
            Decoded::Message { msg, rest } => {
                assert_eq!(msg, a);
                assert_eq!(rest, &fb[..]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_kind_and_oversize() {
        let mut f = encode_frame(&WireMessage::new(1, Body::Suspend)).unwrap();
        f[4] = 0x7f;
        assert_eq!(decode_frame(&f), Err(ProtoError::UnknownKind(0x7f)));
        let big = (DEFAULT_MAX_FRAME as u32 + 1).to_le_bytes();
        assert!(matches!(decode_frame(&big), Err(ProtoError::FrameTooLarge { .. })));
        let msg = WireMessage::new(0, Body::Status { json: "x".repeat(100) });
        let mut out = Vec::new();
        assert!(matches!(encode_frame_into(&msg, 50, &mut out), Err(ProtoError::FrameTooLarge { .. })));
        assert!(out.is_empty());
    }

    #[test]
    fn empty_command_rejected() {
        let spec = TaskSpec::new(TaskId([0; 16]), "");
        assert!(encode_frame(&WireMessage::new(0, Body::TaskDispatch(spec))).is_err());
    }

    #[test]
    fn frame_reader_batches() {
        let msgs: Vec<_> = (0..50).map(|i| WireMessage::new(i, Body::TaskRequest { max_tasks: i as u32 })).collect();
        let mut bytes = Vec::new();
        for m in &msgs {
            bytes.extend(encode_frame(m).unwrap());
        }
        let mut r = FrameReader::new(&bytes[..]);
        let mut got = Vec::new();
        loop {
            let n = got.len();
            r.read_batch(&mut got).unwrap();
            if got.len() == n {
                break;
            }
        }
        assert_eq!(got, msgs);
        let mut r = FrameReader::new(&bytes[..bytes.len() - 1]);
        for m in &msgs[..49] {
            assert_eq!(r.read_message().unwrap().as_ref(), Some(m));
        }
        assert!(r.read_message().is_err());
    }
}
