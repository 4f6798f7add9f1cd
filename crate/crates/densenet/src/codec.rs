//! Little-endian primitives shared by the binary file formats.

use crate::error::FormatError;

#[derive(Debug, Default)]
pub(crate) struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Lengths and extents are stored as `u32`.
    pub fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length exceeds u32 range"));
    }

    pub fn str(&mut self, s: &str) {
        self.len(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        vs.iter().for_each(|v| self.buf.extend_from_slice(&v.to_le_bytes()));
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|v| self.buf.extend_from_slice(&v.to_le_bytes()));
    }

    pub fn u32s(&mut self, vs: &[u32]) {
        vs.iter().for_each(|v| self.u32(*v));
    }
}

/// Cursor over a byte slice whose errors carry the failing offset and the
/// record being decoded.
pub(crate) struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    pub record: Option<usize>,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0, record: None }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn error(&self, msg: impl Into<String>) -> FormatError {
        self.error_at(self.pos, msg)
    }

    pub fn error_at(&self, offset: usize, msg: impl Into<String>) -> FormatError {
        FormatError { offset: offset as u64, record: self.record, msg: msg.into() }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, want: &[u8; 4], what: &str) -> Result<(), FormatError> {
        let start = self.pos;
        let got = self.take(4, what)?;
        if got != want {
            return Err(self.error_at(
                start,
                format!("bad {what}: expected {:?}, found {:?}", ascii(want), ascii(got)),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn len(&mut self, what: &str) -> Result<usize, FormatError> {
        Ok(self.u32(what)? as usize)
    }

    pub fn str(&mut self, what: &str) -> Result<String, FormatError> {
        let n = self.len(what)?;
        let start = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.error_at(start, format!("{what} is not valid UTF-8")))
    }

    /// Reads `n` values, checking the byte count before allocating.
    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, FormatError> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.error(format!("{what} count overflows")))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, FormatError> {
        let bytes = n.checked_mul(8).ok_or_else(|| self.error(format!("{what} count overflows")))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>, FormatError> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.error(format!("{what} count overflows")))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(&self, what: &str) -> Result<(), FormatError> {
        if !self.at_end() {
            return Err(self.error(format!("{} trailing bytes after {what}", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn ascii(b: &[u8]) -> String {
    b.iter().map(|&c| if c.is_ascii_graphic() { c as char } else { '.' }).collect()
}

/// Writes `bytes` next to `path` and renames it into place, so readers
/// never observe a half-written file.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> crate::Result<()> {
    use crate::Error;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &std::path::Path) -> crate::Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| crate::Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut e = Encoder::default();
        e.bytes(b"ABCD");
        e.u32(7);
        e.str("héllo");
        e.f32s(&[1.5, -0.0]);
        let mut d = Decoder::new(&e.buf);
        d.magic(b"ABCD", "magic").unwrap();
        assert_eq!(d.u32("n").unwrap(), 7);
        assert_eq!(d.str("s").unwrap(), "héllo");
        let v = d.f32s(2, "v").unwrap();
        assert_eq!(v[0], 1.5);
        assert!(v[1].is_sign_negative());
        d.finish("test").unwrap();

        let mut d = Decoder::new(&e.buf[..10]);
        d.record = Some(4);
        d.magic(b"ABCD", "magic").unwrap();
        d.u32("n").unwrap();
        let err = d.str("s").unwrap_err();
        assert_eq!((err.offset, err.record), (8, Some(4)));
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let err = Decoder::new(b"XXXX").magic(b"FBK1", "archive magic").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(err.msg.contains("FBK1"));
    }
}
