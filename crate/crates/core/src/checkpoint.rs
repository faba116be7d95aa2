//! Binary model checkpoints.
//!
//! All integers are `u64` and all parameters `f64`, little-endian:
//!
//! ```text
//! b"ICUHEAD1"
//! loss code            0 icu, 1 softmax, 2 center, 3 lgm
//! L                    number of dense layers
//! widths[0..=L]        input width, hidden widths, embedding width D
//! K                    number of classes
//! per layer l:         weight (widths[l+1] × widths[l], row-major), bias
//! head parameters:
//!   icu                mu (K × D), log_var (K × D)
//!   softmax            w (K × D)
//!   center             w (K × D), c (K × D), lambda_center
//!   lgm                mu (K × D), log_var (K × D), alpha, lambda_lik
//! ```
//!
//! Trailing bytes are rejected.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::baselines::{Centers, LgmParams, LinearClassifier};
use crate::error::{Error, Result};
use crate::head::ClassGaussians;
use crate::math::Scalar;
use crate::network::{DenseLayer, Head, LossKind, Mlp, Model};

pub const MAGIC: &[u8; 8] = b"ICUHEAD1";

/// Upper bound on any single width read from disk, to fail fast on garbage.
const MAX_WIDTH: u64 = 1 << 24;

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.write_u64::<LittleEndian>(v as u64).expect("write to Vec");
}

fn put_scalar<T: Scalar>(out: &mut Vec<u8>, v: T) {
    out.write_f64::<LittleEndian>(v.as_f64()).expect("write to Vec");
}

fn put_values<'a, T: Scalar>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a T>) {
    for v in values {
        put_scalar(out, *v);
    }
}

pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u64(&mut out, model.head.kind().code() as usize);
    let sizes = model.mlp.sizes();
    put_u64(&mut out, model.mlp.layers.len());
    for s in &sizes {
        put_u64(&mut out, *s);
    }
    put_u64(&mut out, model.num_classes());
    for layer in &model.mlp.layers {
        put_values(&mut out, layer.weight.iter());
        put_values(&mut out, layer.bias.iter());
    }
    match &model.head {
        Head::Icu(p) => {
            put_values(&mut out, p.mu.iter());
            put_values(&mut out, p.log_var.iter());
        }
        Head::Softmax(c) => put_values(&mut out, c.w.iter()),
        Head::Center { classifier, centers } => {
            put_values(&mut out, classifier.w.iter());
            put_values(&mut out, centers.c.iter());
            put_scalar(&mut out, centers.lambda_center);
        }
        Head::Lgm(p) => {
            put_values(&mut out, p.mu.iter());
            put_values(&mut out, p.log_var.iter());
            put_scalar(&mut out, p.alpha);
            put_scalar(&mut out, p.lambda_lik);
        }
    }
    out
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn u64(&mut self, field: &str) -> Result<u64> {
        self.cur
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::Checkpoint(format!("truncated at {field}")))
    }

    fn width(&mut self, field: &str) -> Result<usize> {
        let v = self.u64(field)?;
        if v == 0 || v > MAX_WIDTH {
            return Err(Error::Checkpoint(format!("implausible {field} {v}")));
        }
        Ok(v as usize)
    }

    fn scalar<T: Scalar>(&mut self, field: &str) -> Result<T> {
        let v = self
            .cur
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::Checkpoint(format!("truncated at {field}")))?;
        Ok(T::lit(v))
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, field: &str) -> Result<Array2<T>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (rows * cols * 8) as u64 > remaining {
            return Err(Error::Checkpoint(format!("truncated at {field}")));
        }
        let values = (0..rows * cols)
            .map(|_| self.scalar(field))
            .collect::<Result<Vec<T>>>()?;
        Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut magic = [0u8; 8];
    let mut r = Reader {
        cur: Cursor::new(bytes),
    };
    r.cur
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated at magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let code = r.u64("loss code")?;
    let kind = LossKind::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown loss code {code}")))?;
    let num_layers = r.width("layer count")?;
    if num_layers > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {num_layers}")));
    }
    let sizes = (0..=num_layers)
        .map(|_| r.width("layer width"))
        .collect::<Result<Vec<_>>>()?;
    let k = r.width("class count")?;

    let mut layers = Vec::with_capacity(num_layers);
    for w in sizes.windows(2) {
        let weight = r.matrix(w[1], w[0], "layer weight")?;
        let bias: Array1<T> = r
            .matrix(1, w[1], "layer bias")?
            .into_shape_with_order(w[1])
            .expect("row");
        layers.push(DenseLayer { weight, bias });
    }
    let mlp = Mlp::from_layers(layers)?;
    let d = mlp.output_dim();
    let head = match kind {
        LossKind::Icu => Head::Icu(ClassGaussians::new(r.matrix(k, d, "mu")?, r.matrix(k, d, "log_var")?)?),
        LossKind::Softmax => Head::Softmax(LinearClassifier::new(r.matrix(k, d, "w")?)?),
        LossKind::Center => {
            let classifier = LinearClassifier::new(r.matrix(k, d, "w")?)?;
            let c = r.matrix(k, d, "centers")?;
            Head::Center {
                classifier,
                centers: Centers::new(c, r.scalar("lambda_center")?)?,
            }
        }
        LossKind::Lgm => {
            let mu = r.matrix(k, d, "mu")?;
            let log_var = r.matrix(k, d, "log_var")?;
            let alpha = r.scalar("alpha")?;
            Head::Lgm(LgmParams::new(mu, log_var, alpha, r.scalar("lambda_lik")?)?)
        }
    };
    if r.cur.position() as usize != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.cur.position() as usize
        )));
    }
    Model::new(mlp, head)
}

pub fn save<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&to_bytes(model)))
        .map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
