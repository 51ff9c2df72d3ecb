//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "SCIW"                      magic
//! u16                         format version
//! u32 u32                     illumination / calibration layer counts
//! per layer: u32 Cout, u32 Cin, u32 Kh, u32 Kw, u8 activation (0 none, 1 relu)
//! per layer: f32 kernel[Cout*Cin*Kh*Kw], f32 bias[Cout]
//! u32 in_channels, u32 hidden_channels, f32 epsilon
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, ConvStack, Tensor};

use super::SciWeights;

pub const MAGIC: &[u8; 4] = b"SCIW";
pub const FORMAT_VERSION: u16 = 1;

pub fn weights_to_bytes(w: &SciWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let layers: Vec<&ConvLayer> = w.illumination.layers.iter().chain(&w.calibration.layers).collect();
    out.extend_from_slice(&(w.illumination.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(w.calibration.layers.len() as u32).to_le_bytes());
    for l in &layers {
        for d in l.kernel.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.push(l.activation.code());
    }
    for l in &layers {
        for v in l.kernel.values().iter().chain(l.bias.values()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(w.in_channels as u32).to_le_bytes());
    out.extend_from_slice(&(w.hidden_channels as u32).to_le_bytes());
    out.extend_from_slice(&w.epsilon.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte {} ({} bytes total)",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("{what} too large")))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

struct LayerHeader {
    name: String,
    shape: [usize; 4],
    activation: Activation,
}

pub fn weights_from_bytes(buf: &[u8]) -> Result<SciWeights> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not an SCIW checkpoint".into()));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let n_illum = r.u32("layer count")? as usize;
    let n_calib = r.u32("layer count")? as usize;
    if n_illum == 0 || n_calib == 0 || n_illum + n_calib > 1024 {
        return Err(Error::Format(format!("implausible layer counts {n_illum} + {n_calib}")));
    }

    let mut headers = Vec::with_capacity(n_illum + n_calib);
    for i in 0..n_illum + n_calib {
        let name = if i < n_illum {
            format!("illumination[{i}]")
        } else {
            format!("calibration[{}]", i - n_illum)
        };
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32(&format!("shape of layer {name}"))? as usize;
        }
        let code = r.u8(&format!("activation of layer {name}"))?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Format(format!("layer {name}: unknown activation code {code}")))?;
        if shape[2] != 3 || shape[3] != 3 {
            return Err(Error::Format(format!(
                "layer {name}: kernel is {}x{}, expected 3x3",
                shape[2], shape[3]
            )));
        }
        if shape[0] == 0 || shape[1] == 0 || shape[0] > 4096 || shape[1] > 4096 {
            return Err(Error::Format(format!("layer {name}: implausible channel counts {shape:?}")));
        }
        headers.push(LayerHeader { name, shape, activation });
    }

    // The chain must be consistent within each network.
    for net in [&headers[..n_illum], &headers[n_illum..]] {
        for pair in net.windows(2) {
            if pair[1].shape[1] != pair[0].shape[0] {
                return Err(Error::Format(format!(
                    "layer {}: expects {} input channels but {} produces {}",
                    pair[1].name, pair[1].shape[1], pair[0].name, pair[0].shape[0]
                )));
            }
        }
    }

    let mut layers = Vec::with_capacity(headers.len());
    for h in &headers {
        let [cout, cin, kh, kw] = h.shape;
        let kernel = r.f32s(cout * cin * kh * kw, &format!("kernel of layer {}", h.name))?;
        let bias = r.f32s(cout, &format!("bias of layer {}", h.name))?;
        layers.push(ConvLayer {
            kernel: Tensor::from_vec(&h.shape, kernel)?,
            bias: Tensor::from_vec(&[cout], bias)?,
            activation: h.activation,
        });
    }
    let in_channels = r.u32("in_channels")? as usize;
    let hidden_channels = r.u32("hidden_channels")? as usize;
    let epsilon = f32::from_le_bytes(r.take(4, "epsilon")?.try_into().expect("4 bytes"));
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    for net in [&headers[..n_illum], &headers[n_illum..]] {
        let first = &net[0];
        let last = &net[net.len() - 1];
        if first.shape[1] != in_channels {
            return Err(Error::Format(format!(
                "layer {}: takes {} channels but the network input has {in_channels}",
                first.name, first.shape[1]
            )));
        }
        if last.shape[0] != in_channels {
            return Err(Error::Format(format!(
                "layer {}: produces {} channels but the network output needs {in_channels}",
                last.name, last.shape[0]
            )));
        }
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Format(format!("epsilon {epsilon} outside (0, 1)")));
    }

    let calibration = layers.split_off(n_illum);
    Ok(SciWeights {
        illumination: ConvStack::new(layers),
        calibration: ConvStack::new(calibration),
        in_channels,
        hidden_channels,
        epsilon,
    })
}

pub fn save_weights(w: &SciWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<SciWeights> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&buf).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
