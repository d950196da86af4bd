use std::fs;
use std::path::Path;

use super::{MsdbError, Result};

/// 8-bit grayscale raster, row-major. Masks hold only 0 and 255.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}x{}, {} on)", self.width, self.height, self.count_on())
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn is_on(&self, x: u32, y: u32) -> bool {
        self.get(x, y) != 0
    }

    pub fn is_binary_mask(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0 || p == 255)
    }

    pub fn count_on(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn intersects(&self, other: &Raster) -> bool {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .any(|(&a, &b)| a != 0 && b != 0)
    }

    pub fn union(&self, other: &Raster) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| if a != 0 || b != 0 { 255 } else { 0 })
                .collect(),
        }
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, reason: &str| MsdbError::Pgm {
            path: path.to_path_buf(),
            offset,
            reason: reason.to_string(),
        };
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(err(0, "missing P5 magic"));
        }
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for field in &mut fields {
            // Whitespace and `#` comments may separate header fields.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(err(pos, "expected a header integer"));
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(start, "header integer out of range"))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(err(pos, "maxval must be 255"));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(err(pos, "expected whitespace after maxval"));
        }
        pos += 1;
        let n = width as usize * height as usize;
        if bytes.len() - pos != n {
            return Err(err(
                pos,
                &format!("expected {n} pixel bytes, found {}", bytes.len() - pos),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels: bytes[pos..].to_vec(),
        })
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MsdbError::io(path, e))?;
        Self::from_pgm(&bytes, path)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| MsdbError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_and_comments() {
        let r = Raster::from_fn(3, 2, |x, y| (x * 10 + y) as u8);
        let bytes = r.to_pgm();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(Raster::from_pgm(&bytes, Path::new("a.pgm")).unwrap(), r);

        let mut commented = b"P5 # made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(r.pixels());
        assert_eq!(Raster::from_pgm(&commented, Path::new("b.pgm")).unwrap(), r);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        let p = Path::new("x.pgm");
        assert!(Raster::from_pgm(b"P2\n1 1\n255\n\0", p).is_err());
        assert!(Raster::from_pgm(b"P5\n1 1\n15\n\0", p).is_err());
        match Raster::from_pgm(b"P5\n2 2\n255\n\0\0", p) {
            Err(MsdbError::Pgm { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mask_algebra() {
        let a = Raster::from_fn(4, 1, |x, _| if x < 2 { 255 } else { 0 });
        let b = Raster::from_fn(4, 1, |x, _| if x == 3 { 255 } else { 0 });
        assert!(!a.intersects(&b));
        assert_eq!(a.union(&b).count_on(), 3);
        assert!(a.is_binary_mask());
        assert!(!Raster::from_fn(1, 1, |_, _| 7).is_binary_mask());
    }
}
