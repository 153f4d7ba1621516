//! Low-level big-endian writer/reader shared by every binary encoding in the
//! crate, plus the length-prefixed frame format used on sockets.

use std::io::{self, Read, Write};

use crate::error::CodecError;
use crate::ids::{NodeId, ObjectId, TaskId, ID_LEN};

/// Upper bound on a single frame; anything larger is treated as corruption.
pub const MAX_FRAME: usize = 256 * 1024 * 1024;

#[derive(Default, Debug, Clone)]
pub struct WireWriter {
    buf: Vec<u8>,
}

impl WireWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// 4-byte length followed by the bytes.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(len_u32(bytes.len()));
        self.raw(bytes)
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn task_id(&mut self, id: &TaskId) -> &mut Self {
        self.raw(&id.0)
    }

    pub fn object_id(&mut self, id: &ObjectId) -> &mut Self {
        self.raw(&id.0)
    }

    pub fn node_id(&mut self, id: NodeId) -> &mut Self {
        self.str(&id.to_string())
    }

    pub fn opt_node(&mut self, id: Option<NodeId>) -> &mut Self {
        match id {
            Some(n) => self.u8(1).node_id(n),
            None => self.u8(0),
        }
    }

    pub fn opt_task(&mut self, id: Option<&TaskId>) -> &mut Self {
        match id {
            Some(t) => self.u8(1).task_id(t),
            None => self.u8(0),
        }
    }

    pub fn object_ids(&mut self, ids: &[ObjectId]) -> &mut Self {
        self.u32(len_u32(ids.len()));
        for id in ids {
            self.object_id(id);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("length exceeds 32-bit wire limit")
}

/// Cursor over a borrowed byte string. Every read is bounds-checked and
/// reports truncation as [`CodecError::Malformed`].
#[derive(Debug, Clone)]
pub struct WireReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> WireReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    /// Fails unless the whole input has been consumed.
    pub fn expect_end(&self) -> Result<(), CodecError> {
        if self.is_done() {
            Ok(())
        } else {
            Err(CodecError::malformed(format!("{} trailing bytes", self.remaining())))
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::malformed(format!(
                "truncated: wanted {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CodecError::malformed(format!("invalid bool byte {b:#04x}"))),
        }
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<&'a str, CodecError> {
        let raw = self.bytes()?;
        std::str::from_utf8(raw).map_err(|e| CodecError::malformed(format!("invalid utf-8: {e}")))
    }

    pub fn task_id(&mut self) -> Result<TaskId, CodecError> {
        Ok(TaskId(self.array::<ID_LEN>()?))
    }

    pub fn object_id(&mut self) -> Result<ObjectId, CodecError> {
        Ok(ObjectId(self.array::<ID_LEN>()?))
    }

    pub fn node_id(&mut self) -> Result<NodeId, CodecError> {
        self.str()?.parse().map_err(CodecError::malformed)
    }

    pub fn opt_node(&mut self) -> Result<Option<NodeId>, CodecError> {
        Ok(if self.bool()? { Some(self.node_id()?) } else { None })
    }

    pub fn opt_task(&mut self) -> Result<Option<TaskId>, CodecError> {
        Ok(if self.bool()? { Some(self.task_id()?) } else { None })
    }

    pub fn object_ids(&mut self) -> Result<Vec<ObjectId>, CodecError> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(self.remaining() / ID_LEN));
        for _ in 0..n {
            out.push(self.object_id()?);
        }
        Ok(out)
    }
}

/// Writes `4-byte length ‖ type ‖ payload`. The length counts the type byte.
pub fn write_frame<W: Write>(w: &mut W, msg_type: u8, payload: &[u8]) -> io::Result<()> {
    let len = len_u32(payload.len() + 1);
    let mut head = [0u8; 5];
    head[..4].copy_from_slice(&len.to_be_bytes());
    head[4] = msg_type;
    w.write_all(&head)?;
    w.write_all(payload)
}

/// Encodes a whole frame into one buffer so it can go out in a single write.
pub fn frame_bytes(msg_type: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 5);
    write_frame(&mut out, msg_type, payload).expect("writing to a Vec cannot fail");
    out
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<(u8, Vec<u8>)>> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len == 0 || len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {len}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let msg_type = body[0];
    body.remove(0);
    Ok(Some((msg_type, body)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout() {
        let f = frame_bytes(0x20, &[1, 2, 3]);
        assert_eq!(f, vec![0, 0, 0, 4, 0x20, 1, 2, 3]);
        let mut cur = io::Cursor::new(f);
        assert_eq!(read_frame(&mut cur).unwrap(), Some((0x20, vec![1, 2, 3])));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
    }

    #[test]
    fn zero_length_frame_rejected() {
        let mut cur = io::Cursor::new(vec![0, 0, 0, 0]);
        assert!(read_frame(&mut cur).is_err());
    }

    #[test]
    fn reader_reports_truncation() {
        let mut r = WireReader::new(&[0, 0, 0, 9, 1]);
        assert!(r.bytes().is_err());
    }

    #[test]
    fn node_id_round_trip() {
        let mut w = WireWriter::new();
        w.node_id(NodeId(3)).opt_node(None).opt_node(Some(NodeId(4)));
        let buf = w.finish();
        let mut r = WireReader::new(&buf);
        assert_eq!(r.node_id().unwrap(), NodeId(3));
        assert_eq!(r.opt_node().unwrap(), None);
        assert_eq!(r.opt_node().unwrap(), Some(NodeId(4)));
        r.expect_end().unwrap();
    }
}
