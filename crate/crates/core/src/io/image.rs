//! Binary PPM/PGM images, label maps, normalization and palettes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ClassMap, Shape, Tensor4};

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Self {
        assert!(channels == 1 || channels == 3, "raster must be gray or RGB");
        assert_eq!(data.len(), width * height * channels, "raster buffer length");
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    /// RGB tensor in [0, 1]; gray rasters are replicated to three channels.
    pub fn to_tensor(&self) -> Tensor4 {
        let (w, c) = (self.width, self.channels);
        Tensor4::from_fn(Shape::new(1, 3, self.height, w), |_, ch, y, x| {
            let src = if c == 1 { 0 } else { ch };
            self.data[(y * w + x) * c + src] as f32 / 255.0
        })
    }

    /// Quantizes a 1×3×H×W tensor with values in [0, 1]; out-of-range
    /// values are clamped.
    pub fn from_tensor(t: &Tensor4) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::invalid("Raster::from_tensor", format!("expected 1×3×H×W, got {s}")));
        }
        let mut data = Vec::with_capacity(s.numel());
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    data.push((t.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Ok(Raster::new(s.w, s.h, 3, data))
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Parses binary PPM (P6) or PGM (P5) with maxval 1..=255. Samples are
/// rescaled to 0..=255 when maxval is smaller.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(format!("unsupported magic `{m}`, expected P5 or P6")),
    };
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} `{t}`"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {maxval} not in 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let start = pos + 1;
    let n = width * height * channels;
    let body = bytes
        .get(start..)
        .filter(|b| b.len() >= n)
        .ok_or_else(|| format!("expected {n} sample bytes"))?;
    let mut data = body[..n].to_vec();
    if maxval != 255 {
        for v in &mut data {
            if *v as usize > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            *v = ((*v as usize * 255 + maxval / 2) / maxval) as u8;
        }
    }
    Ok(Raster::new(width, height, channels, data))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    decode_pnm(&read_bytes(path)?).map_err(|msg| Error::format(path, msg))
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &raster.encode())
}

/// Reads a P6 or P5 file as a 1×3×H×W tensor in [0, 1].
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor4> {
    Ok(read_raster(path)?.to_tensor())
}

/// Writes a 1×3×H×W tensor in [0, 1] as P6.
pub fn write_image(img: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    write_raster(&Raster::from_tensor(img)?, path)
}

/// Reads a P5 file whose sample values are class ids.
pub fn read_label_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(path, "label maps must be P5"));
    }
    let r = decode_pnm(&bytes).map_err(|msg| Error::format(path, msg))?;
    Ok(ClassMap::new(r.height, r.width, r.data.iter().map(|&v| v as u32).collect()))
}

pub fn write_label_map(map: &ClassMap, path: impl AsRef<Path>) -> Result<()> {
    let data = map
        .data()
        .iter()
        .map(|&v| u8::try_from(v).map_err(|_| Error::invalid("write_label_map", format!("label {v} exceeds 255"))))
        .collect::<Result<Vec<_>>>()?;
    write_raster(&Raster::new(map.width(), map.height(), 1, data), path)
}

/// Per-channel normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet statistics.
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
}

/// `(x − mean[c]) / std[c]` for a 3-channel image.
pub fn preprocess(img: &Tensor4, norm: &Normalization) -> Result<Tensor4> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::invalid("preprocess", format!("expected 3 channels, got {s}")));
    }
    if !norm.std.iter().all(|&v| v > 0.0) {
        return Err(Error::invalid("preprocess", format!("std {:?} must be positive", norm.std)));
    }
    Ok(Tensor4::from_fn(s, |n, c, y, x| (img.at(n, c, y, x) - norm.mean[c]) / norm.std[c]))
}

/// Class id → RGB colour.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Palette {
    colors: BTreeMap<u32, [u8; 3]>,
}

/// The 19 Cityscapes evaluation colours.
const CITYSCAPES: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

impl Palette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cityscapes() -> Self {
        let mut p = Palette::new();
        for (i, &c) in CITYSCAPES.iter().enumerate() {
            p.set(i as u32, c);
        }
        p
    }

    /// Cityscapes colours, extended with a deterministic hash colour for
    /// ids past 18.
    pub fn for_classes(num_classes: usize) -> Self {
        let mut p = Palette::cityscapes();
        for id in CITYSCAPES.len() as u32..num_classes as u32 {
            let h = crate::io::init::splitmix64_mix(id as u64);
            p.set(id, [h as u8, (h >> 8) as u8, (h >> 16) as u8]);
        }
        p
    }

    pub fn set(&mut self, id: u32, rgb: [u8; 3]) {
        self.colors.insert(id, rgb);
    }

    pub fn get(&self, id: u32) -> Option<[u8; 3]> {
        self.colors.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Parses lines of `class_id R G B`. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut p = Palette::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || format!("line {}: expected `class_id R G B`, got `{line}`", lineno + 1);
            if fields.len() != 4 {
                return Err(bad());
            }
            let id: u32 = fields[0].parse().map_err(|_| bad())?;
            let mut rgb = [0u8; 3];
            for (slot, f) in rgb.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|_| bad())?;
            }
            if p.colors.insert(id, rgb).is_some() {
                return Err(format!("line {}: class {id} listed twice", lineno + 1));
            }
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Palette::parse(&text).map_err(|msg| Error::format(path, msg))
    }
}

/// Looks up every pixel's colour; ignored pixels are black.
pub fn colorize(map: &ClassMap, palette: &Palette) -> Result<Raster> {
    let mut data = Vec::with_capacity(map.data().len() * 3);
    for &id in map.data() {
        let rgb = if id == map.ignore_value() {
            [0, 0, 0]
        } else {
            palette
                .get(id)
                .ok_or_else(|| Error::invalid("colorize", format!("class {id} has no palette entry")))?
        };
        data.extend_from_slice(&rgb);
    }
    Ok(Raster::new(map.width(), map.height(), 3, data))
}
