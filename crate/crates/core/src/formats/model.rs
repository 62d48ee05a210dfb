use std::io::{Read, Write};
use std::path::Path;

use super::{count, Reader, Writer, FORMAT_VERSION};
use crate::net::{Architecture, NetworkModel, Params};
use crate::nn::Shape3;
use crate::volume::NormStats;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"EGNT";

// Each layer starts with a descriptor: u32 n, then n u32 dimensions.
//   C1:    kernels, kr, kc, kd, sr, sc, sd, in_r, in_c, in_d, p1_r, p1_c, p1_d
//   C2:    kernels, kr, kc, channels, p2_r, p2_c
//   dense: out, in

fn dims(w: &mut Writer<impl Write>, d: &[usize]) -> Result<()> {
    w.u32(d.len() as u32)?;
    for &x in d {
        w.u32(count(x, "dimension")?)?;
    }
    Ok(())
}

fn tensor(w: &mut Writer<impl Write>, weights: &[f64], biases: &[f64]) -> Result<()> {
    w.f32s(weights.iter().chain(biases).map(|&x| x as f32))
}

/// Writes `EGNT`. Parameters are stored as `f32`; trained and initialized
/// models are already rounded to `f32`, so for them this is lossless.
pub fn write_model<W: Write>(out: W, model: &NetworkModel) -> Result<()> {
    let (a, p) = (&model.arch, &model.params);
    let mut w = Writer::new(out);
    w.bytes(MODEL_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(count(model.classes(), "classes")?)?;
    if model
        .labels
        .iter()
        .any(|l| l.contains('\n') || l.is_empty())
    {
        return Err(Error::format("labels must be non-empty single lines"));
    }
    let block = model.labels.join("\n");
    w.u32(count(block.len(), "label bytes")?)?;
    w.bytes(block.as_bytes())?;
    w.f32(model.norm_stats.p95_u as f32)?;
    w.f32(model.norm_stats.p95_v as f32)?;
    w.u64(model.seed)?;
    let (k, s, i, q) = (a.c1_kernel, a.c1_stride, a.input, a.p1_window);
    dims(
        &mut w,
        &[
            a.c1_kernels,
            k.rows,
            k.cols,
            k.depth,
            s.rows,
            s.cols,
            s.depth,
            i.rows,
            i.cols,
            i.depth,
            q.rows,
            q.cols,
            q.depth,
        ],
    )?;
    tensor(&mut w, &p.c1.weights, &p.c1.biases)?;
    dims(
        &mut w,
        &[
            a.c2_kernels,
            a.c2_kernel.0,
            a.c2_kernel.1,
            p.c2.channels,
            a.p2_window.0,
            a.p2_window.1,
        ],
    )?;
    tensor(&mut w, &p.c2.weights, &p.c2.biases)?;
    for d in [&p.fc1, &p.fc2, &p.classifier] {
        dims(&mut w, &[d.out_size, d.in_size])?;
        tensor(&mut w, &d.weights, &d.biases)?;
    }
    w.finish()
}

fn read_dims(r: &mut Reader<impl Read>, layer: &str, n: usize) -> Result<Vec<usize>> {
    let got = r.u32()? as usize;
    if got != n {
        return Err(Error::format(format!(
            "{layer} descriptor has {got} dims, expected {n}"
        )));
    }
    (0..n).map(|_| Ok(r.u32()? as usize)).collect()
}

pub fn read_model<R: Read>(input: R) -> Result<NetworkModel> {
    let mut r = Reader::new(input, "EGNT");
    r.magic(MODEL_MAGIC)?;
    r.version()?;
    let classes = r.u32()? as usize;
    let block_len = r.u32()? as usize;
    let block = String::from_utf8(r.bytes(block_len)?)
        .map_err(|_| Error::format("EGNT labels are not UTF-8"))?;
    let labels: Vec<String> = if block.is_empty() {
        Vec::new()
    } else {
        block.split('\n').map(String::from).collect()
    };
    if labels.len() != classes {
        return Err(Error::format(format!(
            "EGNT declares {classes} classes but holds {} labels",
            labels.len()
        )));
    }
    let norm = NormStats::new(r.f32()? as f64, r.f32()? as f64)
        .map_err(|e| Error::format(format!("EGNT normalization: {e}")))?;
    let seed = r.u64()?;

    let c1 = read_dims(&mut r, "C1", 13)?;
    let c1_values = r.f32s(c1[0] * c1[1] * c1[2] * c1[3] + c1[0])?;
    let c2 = read_dims(&mut r, "C2", 6)?;
    let c2_values = r.f32s(c2[0] * c2[1] * c2[2] * c2[3] + c2[0])?;
    let mut dense = Vec::new();
    for name in ["FC1", "FC2", "classifier"] {
        let d = read_dims(&mut r, name, 2)?;
        dense.push((d[0], r.f32s(d[0] * d[1] + d[0])?));
    }
    r.finish()?;

    let arch = Architecture {
        input: Shape3::new(c1[7], c1[8], c1[9]),
        c1_kernels: c1[0],
        c1_kernel: Shape3::new(c1[1], c1[2], c1[3]),
        c1_stride: Shape3::new(c1[4], c1[5], c1[6]),
        p1_window: Shape3::new(c1[10], c1[11], c1[12]),
        c2_kernels: c2[0],
        c2_kernel: (c2[1], c2[2]),
        p2_window: (c2[4], c2[5]),
        fc1: dense[0].0,
        fc2: dense[1].0,
        classes: dense[2].0,
    };
    if arch.classes != classes {
        return Err(Error::format(format!(
            "EGNT classifier has {} outputs for {classes} classes",
            arch.classes
        )));
    }
    let mut params =
        Params::zeros(&arch).map_err(|e| Error::format(format!("EGNT architecture: {e}")))?;
    let fill = |w: &mut [f64], b: &mut [f64], v: &[f32]| -> Result<()> {
        if v.len() != w.len() + b.len() {
            return Err(Error::format(
                "EGNT layer size does not match the architecture",
            ));
        }
        for (d, &x) in w.iter_mut().chain(b.iter_mut()).zip(v) {
            *d = x as f64;
        }
        Ok(())
    };
    fill(&mut params.c1.weights, &mut params.c1.biases, &c1_values)?;
    if params.c2.channels != c2[3] {
        return Err(Error::format("EGNT C2 channels do not match C1"));
    }
    fill(&mut params.c2.weights, &mut params.c2.biases, &c2_values)?;
    let [fc1, fc2, cls] = [&mut params.fc1, &mut params.fc2, &mut params.classifier];
    for (d, (_, v)) in [fc1, fc2, cls].into_iter().zip(&dense) {
        fill(&mut d.weights, &mut d.biases, v)?;
    }
    NetworkModel::new(arch, params, norm, labels, seed)
        .map_err(|e| Error::format(format!("EGNT model: {e}")))
}

impl NetworkModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_model(super::create(path)?, self)
    }

    pub fn load(path: &Path) -> Result<NetworkModel> {
        read_model(super::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> NetworkModel {
        NetworkModel::initialized(
            Architecture::tiny(3),
            NormStats::new(1.5, 0.25).unwrap(),
            vec!["a".into(), "b b".into(), "ç".into()],
            42,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"EGNT");
        assert_eq!(read_model(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_damage() {
        let mut buf = Vec::new();
        write_model(&mut buf, &tiny_model()).unwrap();
        assert!(matches!(
            read_model(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[8] = 4; // K no longer matches the label block
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf;
        bad[3] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));
    }
}
