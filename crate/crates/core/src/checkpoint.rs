//! Versioned binary checkpoints (`.ckpt`) shared by every trained model.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      4 bytes  "ACKP"
//! version    u16      1
//! kind       u8       1 simclr, 2 byol, 3 autoencoder, 4 supervised, 5 random-encoder
//! seed       u64      run seed; with `steps` this is the full RNG state,
//! steps      u64      since every draw is derived from (seed, purpose, epoch, step, index)
//! meta_len   u32, meta bytes   UTF-8 JSON (configuration, histories, scalers)
//! networks   u16
//! per network:
//!     name_len u16, name bytes
//!     mode     u8   0 training, 1 inference
//!     layers   u32
//!     per layer:
//!         spec_len u32, spec bytes   UTF-8 JSON layer spec
//!         params   u8,  per tensor: rank u8, dims u64 * rank, values f64 * prod(dims)
//!         buffers  u8,  same tensor encoding
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Mode, Network};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ACKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Simclr,
    Byol,
    Autoencoder,
    Supervised,
    RandomEncoder,
}

impl CheckpointKind {
    fn code(self) -> u8 {
        match self {
            CheckpointKind::Simclr => 1,
            CheckpointKind::Byol => 2,
            CheckpointKind::Autoencoder => 3,
            CheckpointKind::Supervised => 4,
            CheckpointKind::RandomEncoder => 5,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => CheckpointKind::Simclr,
            2 => CheckpointKind::Byol,
            3 => CheckpointKind::Autoencoder,
            4 => CheckpointKind::Supervised,
            5 => CheckpointKind::RandomEncoder,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub seed: u64,
    pub steps: u64,
    /// JSON document.
    pub meta: String,
    pub networks: Vec<(String, Network)>,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        message: message.into(),
    }
}

fn io(e: std::io::Error) -> Error {
    bad(e.to_string())
}

fn write_tensor<W: Write>(out: &mut W, t: &Tensor) -> Result<()> {
    out.write_u8(t.rank() as u8).map_err(io)?;
    for &d in t.shape() {
        out.write_u64::<LE>(d as u64).map_err(io)?;
    }
    for &v in t.data() {
        out.write_f64::<LE>(v).map_err(io)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(input: &mut R) -> Result<Tensor> {
    let rank = input.read_u8().map_err(io)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(input.read_u64::<LE>().map_err(io)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| bad("tensor too large"))?;
    let mut data = vec![0.0; n];
    input.read_f64_into::<LE>(&mut data).map_err(io)?;
    Tensor::new(shape, data)
}

fn write_bytes<W: Write>(out: &mut W, bytes: &[u8], wide: bool) -> Result<()> {
    if wide {
        out.write_u32::<LE>(bytes.len() as u32).map_err(io)?;
    } else {
        let len = u16::try_from(bytes.len()).map_err(|_| bad("name too long"))?;
        out.write_u16::<LE>(len).map_err(io)?;
    }
    out.write_all(bytes).map_err(io)
}

fn read_string<R: Read>(input: &mut R, wide: bool) -> Result<String> {
    let len = if wide {
        input.read_u32::<LE>().map_err(io)? as usize
    } else {
        input.read_u16::<LE>().map_err(io)? as usize
    };
    let mut bytes = vec![0u8; len];
    input.read_exact(&mut bytes).map_err(io)?;
    String::from_utf8(bytes).map_err(|_| bad("string is not UTF-8"))
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, seed: u64, steps: u64) -> Self {
        Self {
            kind,
            seed,
            steps,
            meta: "{}".into(),
            networks: Vec::new(),
        }
    }

    pub fn with_meta<T: Serialize>(mut self, meta: &T) -> Result<Self> {
        self.meta = serde_json::to_string(meta).map_err(|e| bad(e.to_string()))?;
        Ok(self)
    }

    pub fn with_network(mut self, name: &str, network: &Network) -> Self {
        self.networks.push((name.to_string(), network.clone()));
        self
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_str(&self.meta).map_err(|e| bad(format!("metadata: {e}")))
    }

    pub fn network(&self, name: &str) -> Result<&Network> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| bad(format!("no network named {name:?}")))
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(bad(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        out.write_u16::<LE>(CHECKPOINT_VERSION).map_err(io)?;
        out.write_u8(self.kind.code()).map_err(io)?;
        out.write_u64::<LE>(self.seed).map_err(io)?;
        out.write_u64::<LE>(self.steps).map_err(io)?;
        write_bytes(&mut out, self.meta.as_bytes(), true)?;
        out.write_u16::<LE>(self.networks.len() as u16)
            .map_err(io)?;
        for (name, net) in &self.networks {
            write_bytes(&mut out, name.as_bytes(), false)?;
            out.write_u8(u8::from(net.mode() == Mode::Inference))
                .map_err(io)?;
            out.write_u32::<LE>(net.layers().len() as u32).map_err(io)?;
            for layer in net.layers() {
                let spec = serde_json::to_string(layer.spec()).map_err(|e| bad(e.to_string()))?;
                write_bytes(&mut out, spec.as_bytes(), true)?;
                out.write_u8(layer.params().len() as u8).map_err(io)?;
                for p in layer.params() {
                    write_tensor(&mut out, &p.value)?;
                }
                out.write_u8(layer.buffers().len() as u8).map_err(io)?;
                for b in layer.buffers() {
                    write_tensor(&mut out, b)?;
                }
            }
        }
        out.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = input.read_u16::<LE>().map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let kind = CheckpointKind::from_code(input.read_u8().map_err(io)?)
            .ok_or_else(|| bad("unknown checkpoint kind"))?;
        let seed = input.read_u64::<LE>().map_err(io)?;
        let steps = input.read_u64::<LE>().map_err(io)?;
        let meta = read_string(&mut input, true)?;
        let count = input.read_u16::<LE>().map_err(io)?;
        let mut networks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = read_string(&mut input, false)?;
            let mode = if input.read_u8().map_err(io)? == 1 {
                Mode::Inference
            } else {
                Mode::Training
            };
            let n_layers = input.read_u32::<LE>().map_err(io)?;
            let mut layers = Vec::new();
            for i in 0..n_layers {
                let spec: LayerSpec = serde_json::from_str(&read_string(&mut input, true)?)
                    .map_err(|e| bad(format!("layer {i} of {name}: {e}")))?;
                let n = input.read_u8().map_err(io)?;
                let values = (0..n)
                    .map(|_| read_tensor(&mut input))
                    .collect::<Result<Vec<_>>>()?;
                let n = input.read_u8().map_err(io)?;
                let buffers = (0..n)
                    .map(|_| read_tensor(&mut input))
                    .collect::<Result<Vec<_>>>()?;
                layers.push(
                    Layer::from_parts(spec, values, buffers)
                        .map_err(|m| bad(format!("layer {i} of {name}: {m}")))?,
                );
            }
            networks.push((name, Network::from_layers(layers, mode)));
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(io)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            kind,
            seed,
            steps,
            meta,
            networks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn round_trip_is_bitwise() {
        let specs = [
            LayerSpec::Conv1d {
                in_channels: 2,
                out_channels: 3,
                kernel: 4,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
            LayerSpec::BatchNorm1d { features: 3 },
        ];
        let mut net = Network::new(&specs, &mut rng_from(5)).unwrap();
        net.set_mode(Mode::Inference);
        let ckpt = Checkpoint::new(CheckpointKind::Simclr, 9, 42)
            .with_meta(&vec![1.5, 2.5])
            .unwrap()
            .with_network("encoder", &net);
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.kind, CheckpointKind::Simclr);
        assert_eq!((back.seed, back.steps), (9, 42));
        assert_eq!(back.meta::<Vec<f64>>().unwrap(), vec![1.5, 2.5]);
        let restored = back.network("encoder").unwrap();
        assert_eq!(restored.digest(), net.digest());
        assert_eq!(restored.specs(), net.specs());
        assert_eq!(restored.mode(), Mode::Inference);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
        assert!(back.network("head").is_err());
    }

    #[test]
    fn rejects_truncation() {
        let ckpt = Checkpoint::new(CheckpointKind::Byol, 0, 0).with_network(
            "x",
            &Network::new(
                &[LayerSpec::Dense {
                    inputs: 2,
                    outputs: 2,
                }],
                &mut rng_from(0),
            )
            .unwrap(),
        );
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&buf[..buf.len() - 1]).is_err());
        buf[4] = 9;
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }
}
