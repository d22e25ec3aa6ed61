//! Length-prefixed framing: `u32 BE length ‖ message bytes`.

use std::io::{self, Read, Write};

pub const MAX_FRAME_LEN: usize = 64 << 20;

pub fn encode_frame(message: &[u8]) -> io::Result<Vec<u8>> {
    let len = check_len(message.len())?;
    let mut out = Vec::with_capacity(4 + message.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(message);
    Ok(out)
}

pub fn check_len(len: usize) -> io::Result<u32> {
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    Ok(len as u32)
}

pub fn write_frame<W: Write>(w: &mut W, message: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(message)?)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    check_len(len)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
