//! Adam training loop, evaluation, and bit-exact checkpoints.
//!
//! All randomness is derived from the config seed: parameter init from
//! the seed itself, the per-step loss mask from `derive_seed(seed ^
//! MASK_SALT, step)`. Resuming from a checkpoint therefore replays the
//! exact byte-for-byte trajectory of an uninterrupted run.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::OctranConfig;
use super::loss::masked_bce_loss;
use super::net::OctranModel;
use super::ModelError;
use crate::formats::FormatError;
use crate::geometry::{iou, OccupancyGrid, VoxelGridSpec};
use crate::scenes::{derive_seed, RenderedSample};
use crate::tensor::{read_tnsr, write_tnsr, Tensor, Var};

const MASK_SALT: u64 = 0x6D61_736B; // "mask"
const MANIFEST_HEADER: &str = "octran-checkpoint v1";

/// Adam with bias correction; β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
pub struct Adam {
    lr: f64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(lr: f64) -> Self {
        Self { lr, m: BTreeMap::new(), v: BTreeMap::new(), t: 0 }
    }

    pub fn step(&mut self, params: &[(String, Var)]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (name, p) in params {
            let g = p.grad();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            *m = m.scale(Self::BETA1).add(&g.scale(1.0 - Self::BETA1)).unwrap();
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            *v = v
                .scale(Self::BETA2)
                .add(&g.mul(&g).unwrap().scale(1.0 - Self::BETA2))
                .unwrap();
            let update = m
                .scale(1.0 / c1)
                .zip(&v.scale(1.0 / c2), "adam", |mh, vh| mh / (vh.sqrt() + Self::EPS))
                .unwrap();
            p.set_value(p.to_tensor().sub(&update.scale(self.lr)).unwrap());
        }
    }
}

pub struct TrainState {
    pub model: OctranModel,
    adam: Adam,
    pub step: u64,
    pub loss_history: Vec<f64>,
    pub iou_history: Vec<(u64, f64)>,
}

impl TrainState {
    pub fn new(cfg: OctranConfig) -> Result<Self, ModelError> {
        let lr = cfg.lr;
        Ok(Self {
            model: OctranModel::new(cfg)?,
            adam: Adam::new(lr),
            step: 0,
            loss_history: Vec::new(),
            iou_history: Vec::new(),
        })
    }

    /// One optimizer step on a batch of `bs` samples; returns the batch
    /// loss.
    pub fn train_step(&mut self, batch: &[RenderedSample]) -> Result<f64, ModelError> {
        let cfg = self.model.config();
        if batch.len() != cfg.bs {
            return Err(ModelError::InvalidConfig(format!(
                "batch of {} samples, config bs={}",
                batch.len(),
                cfg.bs
            )));
        }
        let lmp = cfg.lmp;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ MASK_SALT, self.step));
        let mut total: Option<Var> = None;
        for sample in batch {
            let logits = self.model.forward(&sample.image)?;
            let loss = masked_bce_loss(&logits, &sample.gt, lmp, &mut rng)?;
            total = Some(match total {
                Some(acc) => acc.add(&loss)?,
                None => loss,
            });
        }
        let loss = total.unwrap().scale(1.0 / batch.len() as f64);
        let loss_value = loss.value().item();
        if !loss_value.is_finite() {
            return Err(ModelError::Diverged { step: self.step });
        }
        let params = self.model.params();
        for (_, p) in &params {
            p.reset_grad();
        }
        loss.backward();
        self.adam.step(&params);
        self.step += 1;
        self.loss_history.push(loss_value);
        Ok(loss_value)
    }

    pub fn record_iou(&mut self, value: f64) {
        self.iou_history.push((self.step, value));
    }

    // ---- checkpoints ----

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(FormatError::Io)?;
        let mut manifest = String::new();
        manifest.push_str(MANIFEST_HEADER);
        manifest.push('\n');
        manifest.push_str(&format!("step={}\n", self.step));
        let losses: Vec<String> = self.loss_history.iter().map(|l| l.to_string()).collect();
        manifest.push_str(&format!("loss_history={}\n", losses.join(" ")));
        let ious: Vec<String> =
            self.iou_history.iter().map(|(s, v)| format!("{s}:{v}")).collect();
        manifest.push_str(&format!("iou_history={}\n", ious.join(" ")));
        manifest.push('\n');
        manifest.push_str(&self.model.config().to_text());
        fs::write(dir.join("manifest.txt"), manifest).map_err(FormatError::Io)?;

        let params = self.model.params();
        let mut blob = Vec::new();
        write_u32(&mut blob, params.len() as u32)?;
        for (name, p) in &params {
            write_name(&mut blob, name)?;
            write_tnsr(&mut blob, &p.to_tensor())?;
        }
        fs::write(dir.join("params.bin"), blob).map_err(FormatError::Io)?;

        let mut blob = Vec::new();
        blob.extend_from_slice(&self.adam.t.to_le_bytes());
        write_u32(&mut blob, params.len() as u32)?;
        for (name, p) in &params {
            write_name(&mut blob, name)?;
            let m = self.adam.m.get(name).cloned().unwrap_or_else(|| Tensor::zeros(&p.shape()));
            let v = self.adam.v.get(name).cloned().unwrap_or_else(|| Tensor::zeros(&p.shape()));
            write_tnsr(&mut blob, &m)?;
            write_tnsr(&mut blob, &v)?;
        }
        fs::write(dir.join("moments.bin"), blob).map_err(FormatError::Io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let manifest =
            fs::read_to_string(dir.join("manifest.txt")).map_err(FormatError::Io)?;
        let (head, config_text) = manifest.split_once("\n\n").ok_or_else(|| {
            ModelError::Checkpoint("manifest has no blank-line separator".into())
        })?;
        let mut lines = head.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(ModelError::Checkpoint("bad manifest header".into()));
        }
        let mut step = None;
        let mut loss_history = None;
        let mut iou_history = None;
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Checkpoint(format!("bad manifest line {line:?}")))?;
            match k {
                "step" => {
                    step = Some(v.parse::<u64>().map_err(|e| {
                        ModelError::Checkpoint(format!("bad step: {e}"))
                    })?)
                }
                "loss_history" => {
                    loss_history = Some(parse_floats(v)?);
                }
                "iou_history" => {
                    let mut out = Vec::new();
                    for pair in v.split_whitespace() {
                        let (s, i) = pair.split_once(':').ok_or_else(|| {
                            ModelError::Checkpoint(format!("bad iou entry {pair:?}"))
                        })?;
                        out.push((
                            s.parse().map_err(|_| {
                                ModelError::Checkpoint(format!("bad iou step {s:?}"))
                            })?,
                            i.parse().map_err(|_| {
                                ModelError::Checkpoint(format!("bad iou value {i:?}"))
                            })?,
                        ));
                    }
                    iou_history = Some(out);
                }
                other => {
                    return Err(ModelError::Checkpoint(format!("unknown manifest key {other:?}")))
                }
            }
        }
        let step = step.ok_or_else(|| ModelError::Checkpoint("missing step".into()))?;
        let cfg = OctranConfig::from_text(config_text)?;
        let lr = cfg.lr;
        let model = OctranModel::new(cfg)?;
        let params = model.params();

        let blob = fs::read(dir.join("params.bin")).map_err(FormatError::Io)?;
        let mut cursor = blob.as_slice();
        let count = read_u32(&mut cursor)? as usize;
        if count != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {count} parameters, model has {}",
                params.len()
            )));
        }
        for (name, p) in &params {
            let got = read_name(&mut cursor)?;
            if &got != name {
                return Err(ModelError::Checkpoint(format!(
                    "parameter order mismatch: expected {name:?}, found {got:?}"
                )));
            }
            let t = read_tnsr(&mut cursor)?;
            if t.shape() != p.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            p.set_value(t);
        }
        expect_empty(cursor, "params.bin")?;

        let blob = fs::read(dir.join("moments.bin")).map_err(FormatError::Io)?;
        let mut cursor = blob.as_slice();
        if cursor.len() < 8 {
            return Err(FormatError::Truncated { format: "checkpoint" }.into());
        }
        let t = u64::from_le_bytes(cursor[..8].try_into().unwrap());
        cursor = &cursor[8..];
        let count = read_u32(&mut cursor)? as usize;
        if count != params.len() {
            return Err(ModelError::Checkpoint("moment count mismatch".into()));
        }
        let mut adam = Adam::new(lr);
        adam.t = t;
        for (name, _) in &params {
            let got = read_name(&mut cursor)?;
            if &got != name {
                return Err(ModelError::Checkpoint(format!(
                    "moment order mismatch at {name:?}"
                )));
            }
            adam.m.insert(name.clone(), read_tnsr(&mut cursor)?);
            adam.v.insert(name.clone(), read_tnsr(&mut cursor)?);
        }
        expect_empty(cursor, "moments.bin")?;

        Ok(Self {
            model,
            adam,
            step,
            loss_history: loss_history.unwrap_or_default(),
            iou_history: iou_history.unwrap_or_default(),
        })
    }
}

fn parse_floats(v: &str) -> Result<Vec<f64>, ModelError> {
    v.split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| ModelError::Checkpoint(format!("bad float {s:?}")))
        })
        .collect()
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), FormatError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(cursor: &mut &[u8]) -> Result<u32, FormatError> {
    if cursor.len() < 4 {
        return Err(FormatError::Truncated { format: "checkpoint" });
    }
    let v = u32::from_le_bytes(cursor[..4].try_into().unwrap());
    *cursor = &cursor[4..];
    Ok(v)
}

fn write_name(w: &mut impl Write, name: &str) -> Result<(), FormatError> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name(cursor: &mut &[u8]) -> Result<String, FormatError> {
    let len = read_u32(cursor)? as usize;
    if cursor.len() < len {
        return Err(FormatError::Truncated { format: "checkpoint" });
    }
    let name = String::from_utf8(cursor[..len].to_vec()).map_err(|_| FormatError::Invalid {
        format: "checkpoint",
        detail: "parameter name is not utf-8".into(),
    })?;
    *cursor = &cursor[len..];
    Ok(name)
}

fn expect_empty(cursor: &[u8], what: &'static str) -> Result<(), FormatError> {
    if cursor.is_empty() {
        Ok(())
    } else {
        Err(FormatError::TrailingData { format: what })
    }
}

/// Binarize logits at `threshold` on the sigmoid scale.
pub fn logits_to_grid(
    logits: &Tensor,
    spec: &VoxelGridSpec,
    threshold: f64,
) -> Result<OccupancyGrid, ModelError> {
    let dims = spec.dims;
    if logits.shape() != dims {
        return Err(ModelError::ShapeMismatch(format!(
            "logits {:?} vs grid {:?}",
            logits.shape(),
            dims
        )));
    }
    let mut g = OccupancyGrid::empty(spec.clone());
    let d = logits.data();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let l = d[(i * dims[1] + j) * dims[2] + k];
                if 1.0 / (1.0 + (-l).exp()) > threshold {
                    g.set([i, j, k], true);
                }
            }
        }
    }
    Ok(g)
}

/// Mean IoU of thresholded predictions against ground truth.
pub fn evaluate(
    model: &OctranModel,
    samples: &[RenderedSample],
    threshold: f64,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let logits = model.forward(&s.image)?.to_tensor();
        let pred = logits_to_grid(&logits, s.gt.spec(), threshold)?;
        total += iou(&pred, &s.gt)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean IoU of the constant all-empty (`occupied = false`) or
/// all-occupied (`occupied = true`) predictor.
pub fn baseline_iou(samples: &[RenderedSample], occupied: bool) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let spec = s.gt.spec().clone();
        let pred = if occupied {
            OccupancyGrid::from_cells(spec.clone(), vec![1; spec.voxel_count()])?
        } else {
            OccupancyGrid::empty(spec)
        };
        total += iou(&pred, &s.gt)?;
    }
    Ok(total / samples.len() as f64)
}
