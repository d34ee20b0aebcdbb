//! Little-endian encoding helpers shared by the binary file formats.

use vsrkit_core::{Shape, Tensor};

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn dim(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in 32 bits"));
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.0.reserve(vs.len() * 4);
        for v in vs {
            self.bytes(&v.to_le_bytes());
        }
    }

    pub fn shape(&mut self, s: Shape) {
        s.dims().into_iter().for_each(|d| self.dim(d));
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.shape(t.shape());
        self.f32s(t.data());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

pub(crate) type Short = &'static str;

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Short> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, Short> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn dim(&mut self) -> Result<usize, Short> {
        self.u32().map(|v| v as usize)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, Short> {
        let raw = self.take(n.checked_mul(4).ok_or("truncated")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn shape(&mut self) -> Result<Shape, Short> {
        Ok(Shape::new(self.dim()?, self.dim()?, self.dim()?, self.dim()?))
    }

    pub fn tensor(&mut self) -> Result<Tensor, Short> {
        let s = self.shape()?;
        let n = s.dims().iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
        let data = self.f32s(n)?;
        Tensor::from_vec(s, data).map_err(|_| "bad tensor")
    }

    pub fn finish(&self) -> Result<(), Short> {
        if self.pos == self.buf.len() { Ok(()) } else { Err("trailing bytes") }
    }
}
