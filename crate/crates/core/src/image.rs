//! Grayscale intensity images, PGM/PNG codecs, and dataset splitting.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major grayscale image with nominal range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f64> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Value at `(row, col)` with half-sample symmetric reflection outside the grid.
    #[inline]
    pub fn get_reflect(&self, row: isize, col: isize) -> T {
        let r = reflect_index(row, self.height);
        let c = reflect_index(col, self.width);
        self.data[r * self.width + c]
    }

    pub fn same_shape<U: Scalar>(&self, other: &Image<U>) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    pub fn mean(&self) -> T {
        let sum: f64 = self.data.iter().map(|v| v.as_f64()).sum();
        T::of(sum / self.data.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Affine map onto `[0, 1]`; constant images become all 0.5.
    pub fn normalize(&self) -> Self {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if !(span > T::zero()) {
            return Self::filled(self.height, self.width, T::of(0.5));
        }
        self.map(|v| ((v - lo) / span).max(T::zero()).min(T::one()))
    }

    /// Exact sub-grid copy of the `w`×`h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::CropOutOfBounds {
                x0,
                y0,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Self::from_fn(h, w, |r, c| self.get(y0 + r, x0 + c)))
    }

    /// Area-averaging (box) resample to `w`×`h`.
    pub fn downsample(&self, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || w > self.width || h > self.height {
            return Err(Error::UpsampleRequested {
                src_w: self.width,
                src_h: self.height,
                dst_w: w,
                dst_h: h,
            });
        }
        let wx = box_weights(self.width, w);
        let wy = box_weights(self.height, h);
        // Columns first, then rows.
        let mut tmp = vec![0.0f64; self.height * w];
        for r in 0..self.height {
            let row = &self.data[r * self.width..(r + 1) * self.width];
            for (o, taps) in wx.iter().enumerate() {
                tmp[r * w + o] = taps.iter().map(|&(k, wt)| row[k].as_f64() * wt).sum();
            }
        }
        let mut out = Vec::with_capacity(w * h);
        for taps in &wy {
            for c in 0..w {
                let v: f64 = taps.iter().map(|&(k, wt)| tmp[k * w + c] * wt).sum();
                out.push(T::of(v));
            }
        }
        Image::new(h, w, out)
    }
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Per-output (source index, weight) taps for 1-D area averaging.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let a = o as f64 * scale;
            let b = (o + 1) as f64 * scale;
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(src);
            (first..last)
                .filter_map(|k| {
                    let overlap = (b.min(k as f64 + 1.0) - a.max(k as f64)).max(0.0);
                    (overlap > 0.0).then_some((k, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Stored sample depth for image files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Loads a binary PGM (P5) or grayscale PNG, scaling by the format maximum into `[0, 1]`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.len() < 2 {
        Err(Error::Truncated { path: path.into() })
    } else {
        Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "not binary PGM (P5) or PNG".into(),
        })
    }
}

fn decode_pgm<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Image<T>> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                None => return Err(Error::Truncated { path: path.into() }),
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return match bytes.get(pos) {
                None => Err(Error::Truncated { path: path.into() }),
                Some(_) => Err(Error::Malformed {
                    path: path.into(),
                    reason: "expected a decimal header field".into(),
                }),
            };
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed {
                path: path.into(),
                reason: "header field out of range".into(),
            })?;
    }
    let [width, height, maxval] = fields;
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        None => return Err(Error::Truncated { path: path.into() }),
        Some(_) => {
            return Err(Error::Malformed {
                path: path.into(),
                reason: "missing whitespace after maxval".into(),
            })
        }
    }
    if width == 0 || height == 0 {
        return Err(Error::ZeroArea { path: path.into() });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("maxval {maxval}"),
        });
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n * bps {
        return Err(Error::Truncated { path: path.into() });
    }
    let scale = maxval as f64;
    let data = if bps == 1 {
        raster[..n].iter().map(|&b| T::of(b as f64 / scale)).collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|p| T::of(u16::from_be_bytes([p[0], p[1]]) as f64 / scale))
            .collect()
    };
    Image::new(height, width, data)
}

fn decode_png<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Image<T>> {
    let map_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated { path: path.into() }
        }
        other => Error::Malformed {
            path: path.into(),
            reason: other.to_string(),
        },
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(map_err)?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(Error::ZeroArea { path: path.into() });
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("PNG color type {:?}", info.color_type),
        });
    }
    let depth = info.bit_depth;
    if depth != png::BitDepth::Eight && depth != png::BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: format!("PNG bit depth {depth:?}"),
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::ZeroArea { path: path.into() })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(map_err)?;
    let mut data = Vec::with_capacity(width * height);
    for r in 0..height {
        let line = &buf[r * frame.line_size..(r + 1) * frame.line_size];
        if depth == png::BitDepth::Eight {
            data.extend(line[..width].iter().map(|&b| T::of(b as f64 / 255.0)));
        } else {
            data.extend(
                line[..2 * width]
                    .chunks_exact(2)
                    .map(|p| T::of(u16::from_be_bytes([p[0], p[1]]) as f64 / 65535.0)),
            );
        }
    }
    Image::new(height, width, data)
}

fn quantize<T: Scalar>(img: &Image<T>, depth: BitDepth) -> Vec<u16> {
    let max = depth.max_value() as f64;
    img.data()
        .iter()
        .map(|v| {
            let x = v.as_f64();
            let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
            (x * max).round() as u16
        })
        .collect()
}

/// Binary PGM (P5) bytes; values outside `[0, 1]` are clamped.
pub fn encode_pgm<T: Scalar>(img: &Image<T>, depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), depth.max_value())
        .into_bytes();
    let q = quantize(img, depth);
    match depth {
        BitDepth::Eight => out.extend(q.iter().map(|&v| v as u8)),
        BitDepth::Sixteen => out.extend(q.iter().flat_map(|v| v.to_be_bytes())),
    }
    out
}

pub fn save_pgm<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img, depth)).map_err(|e| Error::io(path, e))
}

pub fn save_png<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    let q = quantize(img, depth);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            q.iter().map(|&v| v as u8).collect()
        }
        BitDepth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            q.iter().flat_map(|v| v.to_be_bytes()).collect()
        }
    };
    let to_err = |e: png::EncodingError| Error::Malformed {
        path: path.into(),
        reason: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Writes PNG when the extension is `.png`, PGM otherwise.
pub fn save_image<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => save_png(img, path, depth),
        _ => save_pgm(img, path, depth),
    }
}

/// Disjoint train/validation/test partition of file identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Uniform `[0, 1)` draw keyed on `(seed, id)`.
fn keyed_unit(seed: u64, id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Assigns each id by a keyed hash, so membership does not depend on list order.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::DegenerateRatios(ratios));
    }
    let t_train = ratios[0];
    let t_val = ratios[0] + ratios[1];
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for id in ids {
        let id = id.as_ref();
        let u = keyed_unit(seed, id);
        let bucket = if u < t_train || ratios[1] + ratios[2] == 0.0 {
            &mut split.train
        } else if u < t_val || ratios[2] == 0.0 {
            &mut split.validation
        } else {
            &mut split.test
        };
        bucket.push(id.to_owned());
    }
    Ok(split)
}

impl DatasetSplit {
    /// One `<split>\t<id>` line per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for id in ids {
                s.push_str(name);
                s.push('\t');
                s.push_str(id);
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let mut split = DatasetSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            seed,
        };
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (name, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::invalid(format!("split line without tab: {line:?}")))?;
            match name {
                "train" => split.train.push(id.into()),
                "validation" => split.validation.push(id.into()),
                "test" => split.test.push(id.into()),
                other => return Err(Error::invalid(format!("unknown split {other:?}"))),
            }
        }
        Ok(split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        f.write_all(self.to_text().as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path, e))
    }
}
