//! Pure-Rust evaluator for ONNX speaker models.
//!
//! Supports the float operators used by common convolutional and
//! feed-forward speaker encoders. Graphs using anything else are rejected
//! at load time with the list of unsupported operators.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::proto::{
    AttributeValue, Dim, GraphProto, ModelProto, NodeProto, TensorProto, DTYPE_DOUBLE, DTYPE_FLOAT,
    DTYPE_INT32, DTYPE_INT64,
};
use super::{EmbeddingError, SpeakerEncoder};

pub const SUPPORTED_OPS: &[&str] = &[
    "Abs",
    "Add",
    "AveragePool",
    "BatchNormalization",
    "Cast",
    "Clip",
    "Concat",
    "Constant",
    "Conv",
    "Div",
    "Erf",
    "Exp",
    "Expand",
    "Flatten",
    "Gather",
    "Gemm",
    "GlobalAveragePool",
    "Identity",
    "LayerNormalization",
    "LeakyRelu",
    "Log",
    "LpNormalization",
    "MatMul",
    "Max",
    "MaxPool",
    "Min",
    "Mul",
    "Neg",
    "Pow",
    "Reciprocal",
    "ReduceL2",
    "ReduceMax",
    "ReduceMean",
    "ReduceSum",
    "Relu",
    "Reshape",
    "Shape",
    "Sigmoid",
    "Slice",
    "Softmax",
    "Sqrt",
    "Squeeze",
    "Sub",
    "Tanh",
    "Transpose",
    "Unsqueeze",
];

#[derive(Debug, Clone, PartialEq)]
enum Data {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
struct Tensor {
    shape: Vec<usize>,
    data: Data,
}

fn fail<T>(msg: impl Into<String>) -> Result<T, EmbeddingError> {
    Err(EmbeddingError::Inference(msg.into()))
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data: Data::F32(data),
        }
    }

    fn i64(shape: Vec<usize>, data: Vec<i64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data: Data::I64(data),
        }
    }

    fn floats(&self) -> Result<&[f32], EmbeddingError> {
        match &self.data {
            Data::F32(v) => Ok(v),
            Data::I64(_) => fail("expected a float tensor, got int64"),
        }
    }

    fn ints(&self) -> Result<Vec<i64>, EmbeddingError> {
        match &self.data {
            Data::I64(v) => Ok(v.clone()),
            Data::F32(_) => fail("expected an int64 tensor, got float"),
        }
    }

    fn rank(&self) -> usize {
        self.shape.len()
    }

    fn with_shape(mut self, shape: Vec<usize>) -> Result<Self, EmbeddingError> {
        if numel(&shape) != numel(&self.shape) {
            return fail(format!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    fn from_proto(t: &TensorProto) -> Result<Self, EmbeddingError> {
        let mut shape = Vec::with_capacity(t.dims.len());
        for &d in &t.dims {
            if d < 0 {
                return fail(format!("tensor '{}' has negative dimension", t.name));
            }
            shape.push(d as usize);
        }
        let n = numel(&shape);
        let data = match t.data_type {
            DTYPE_FLOAT => Data::F32(if !t.raw_data.is_empty() {
                le_chunks::<4>(&t.raw_data)
                    .map(f32::from_le_bytes)
                    .collect()
            } else {
                t.float_data.clone()
            }),
            DTYPE_DOUBLE => Data::F32(if !t.raw_data.is_empty() {
                le_chunks::<8>(&t.raw_data)
                    .map(|b| f64::from_le_bytes(b) as f32)
                    .collect()
            } else {
                t.double_data.iter().map(|&v| v as f32).collect()
            }),
            DTYPE_INT64 => Data::I64(if !t.raw_data.is_empty() {
                le_chunks::<8>(&t.raw_data)
                    .map(i64::from_le_bytes)
                    .collect()
            } else {
                t.int64_data.clone()
            }),
            DTYPE_INT32 => Data::I64(if !t.raw_data.is_empty() {
                le_chunks::<4>(&t.raw_data)
                    .map(|b| i64::from(i32::from_le_bytes(b)))
                    .collect()
            } else {
                t.int32_data.clone()
            }),
            other => {
                return fail(format!(
                    "tensor '{}' has unsupported data type {other}",
                    t.name
                ))
            }
        };
        let len = match &data {
            Data::F32(v) => v.len(),
            Data::I64(v) => v.len(),
        };
        if len != n {
            return fail(format!(
                "tensor '{}' declares {n} elements but stores {len}",
                t.name
            ));
        }
        Ok(Self { shape, data })
    }
}

fn le_chunks<const N: usize>(raw: &[u8]) -> impl Iterator<Item = [u8; N]> + '_ {
    raw.chunks_exact(N).map(|c| c.try_into().unwrap())
}

fn attr_int(node: &NodeProto, name: &str, default: i64) -> Result<i64, EmbeddingError> {
    match node.attr(name) {
        None => Ok(default),
        Some(AttributeValue::Int(v)) => Ok(*v),
        Some(_) => fail(format!(
            "{}: attribute '{name}' must be an int",
            node.op_type
        )),
    }
}

fn attr_float(node: &NodeProto, name: &str, default: f32) -> Result<f32, EmbeddingError> {
    match node.attr(name) {
        None => Ok(default),
        Some(AttributeValue::Float(v)) => Ok(*v),
        Some(_) => fail(format!(
            "{}: attribute '{name}' must be a float",
            node.op_type
        )),
    }
}

fn attr_ints(node: &NodeProto, name: &str) -> Result<Option<Vec<i64>>, EmbeddingError> {
    match node.attr(name) {
        None => Ok(None),
        Some(AttributeValue::Ints(v)) => Ok(Some(v.clone())),
        Some(_) => fail(format!("{}: attribute '{name}' must be ints", node.op_type)),
    }
}

fn norm_axis(axis: i64, rank: usize) -> Result<usize, EmbeddingError> {
    let a = if axis < 0 { axis + rank as i64 } else { axis };
    if a < 0 || a as usize >= rank.max(1) {
        return fail(format!("axis {axis} out of range for rank {rank}"));
    }
    Ok(a as usize)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, EmbeddingError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return fail(format!("shapes {a:?} and {b:?} do not broadcast")),
        };
    }
    Ok(out)
}

/// Element strides of `shape` when broadcast to `out` (0 on stretched axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visit every index of `out`, yielding the flat offsets into two
/// broadcast operands.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        f(oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary(
    a: &Tensor,
    b: &Tensor,
    ff: impl Fn(f32, f32) -> f32,
    fi: impl Fn(i64, i64) -> Option<i64>,
) -> Result<Tensor, EmbeddingError> {
    let shape = broadcast_shape(&a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &shape);
    let sb = broadcast_strides(&b.shape, &shape);
    let mut err = None;
    let data = match (&a.data, &b.data) {
        (Data::F32(x), Data::F32(y)) => {
            let mut out = Vec::with_capacity(numel(&shape));
            for_each_broadcast(&shape, &sa, &sb, |i, j| out.push(ff(x[i], y[j])));
            Data::F32(out)
        }
        (Data::I64(x), Data::I64(y)) => {
            let mut out = Vec::with_capacity(numel(&shape));
            for_each_broadcast(&shape, &sa, &sb, |i, j| match fi(x[i], y[j]) {
                Some(v) => out.push(v),
                None => {
                    err.get_or_insert(());
                    out.push(0);
                }
            });
            Data::I64(out)
        }
        _ => return fail("binary operator on mixed float and int64 tensors"),
    };
    if err.is_some() {
        return fail("int64 arithmetic overflow or division by zero");
    }
    Ok(Tensor { shape, data })
}

fn unary(t: &Tensor, f: impl Fn(f32) -> f32) -> Result<Tensor, EmbeddingError> {
    Ok(Tensor::f32(
        t.shape.clone(),
        t.floats()?.iter().map(|&v| f(v)).collect(),
    ))
}

/// Abramowitz & Stegun 7.1.26, absolute error below 1.5e-7.
fn erf(x: f32) -> f32 {
    let x = f64::from(x);
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736
                + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    (if x >= 0.0 { y } else { -y }) as f32
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, EmbeddingError> {
    let (x, y) = (a.floats()?, b.floats()?);
    if a.rank() == 0 || b.rank() == 0 {
        return fail("MatMul on a scalar");
    }
    let mut ash = a.shape.clone();
    let mut bsh = b.shape.clone();
    let a_vec = ash.len() == 1;
    let b_vec = bsh.len() == 1;
    if a_vec {
        ash.insert(0, 1);
    }
    if b_vec {
        bsh.push(1);
    }
    let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    if k != k2 {
        return fail(format!(
            "MatMul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        ));
    }
    let abatch = &ash[..ash.len() - 2];
    let bbatch = &bsh[..bsh.len() - 2];
    let batch = broadcast_shape(abatch, bbatch)?;
    let sa = broadcast_strides(abatch, &batch);
    let sb = broadcast_strides(bbatch, &batch);
    let mut out = vec![0.0f32; numel(&batch) * m * n];
    let mut chunk = 0;
    let mut offsets = Vec::new();
    for_each_broadcast(&batch, &sa, &sb, |i, j| offsets.push((i, j)));
    if batch.is_empty() {
        offsets = vec![(0, 0)];
    }
    for (ia, ib) in offsets {
        let aoff = ia * m * k;
        let boff = ib * k * n;
        let o = &mut out[chunk * m * n..(chunk + 1) * m * n];
        for r in 0..m {
            let orow = &mut o[r * n..(r + 1) * n];
            for p in 0..k {
                let av = x[aoff + r * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &y[boff + p * n..boff + (p + 1) * n];
                for (dst, &bv) in orow.iter_mut().zip(brow) {
                    *dst += av * bv;
                }
            }
        }
        chunk += 1;
    }
    let mut shape = batch;
    if !a_vec {
        shape.push(m);
    }
    if !b_vec {
        shape.push(n);
    }
    Ok(Tensor::f32(shape, out))
}

fn transpose(t: &Tensor, perm: &[usize]) -> Result<Tensor, EmbeddingError> {
    let rank = t.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank
        || perm
            .iter()
            .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return fail(format!("invalid permutation {perm:?} for rank {rank}"));
    }
    let shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
    let src = strides(&t.shape);
    let pst: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
    let mut offsets = Vec::with_capacity(numel(&shape));
    for_each_broadcast(&shape, &pst, &pst, |i, _| offsets.push(i));
    let data = match &t.data {
        Data::F32(v) => Data::F32(offsets.iter().map(|&i| v[i]).collect()),
        Data::I64(v) => Data::I64(offsets.iter().map(|&i| v[i]).collect()),
    };
    Ok(Tensor { shape, data })
}

fn gemm(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let alpha = attr_float(node, "alpha", 1.0)?;
    let beta = attr_float(node, "beta", 1.0)?;
    let mut a = req(ins, 0)?.clone();
    let mut b = req(ins, 1)?.clone();
    if a.rank() != 2 || b.rank() != 2 {
        return fail("Gemm takes 2-D inputs");
    }
    if attr_int(node, "transA", 0)? != 0 {
        a = transpose(&a, &[1, 0])?;
    }
    if attr_int(node, "transB", 0)? != 0 {
        b = transpose(&b, &[1, 0])?;
    }
    let mut y = matmul(&a, &b)?;
    if alpha != 1.0 {
        y = unary(&y, |v| alpha * v)?;
    }
    if let Some(c) = opt(ins, 2) {
        let c = unary(c, |v| beta * v)?;
        y = binary(&y, &c, |p, q| p + q, |_, _| None)?;
        if y.rank() != 2 {
            return fail("Gemm bias does not broadcast to the output");
        }
    }
    Ok(y)
}

struct PoolGeom {
    kernel: Vec<usize>,
    strides: Vec<usize>,
    pads: Vec<usize>,
    dilations: Vec<usize>,
}

impl PoolGeom {
    fn read(node: &NodeProto, kernel: Vec<usize>) -> Result<Self, EmbeddingError> {
        let nd = kernel.len();
        match node.attr("auto_pad") {
            None => {}
            Some(AttributeValue::String(s)) if s == "NOTSET" || s == "VALID" => {}
            Some(_) => {
                return fail(format!(
                    "{}: only explicit padding is supported",
                    node.op_type
                ))
            }
        }
        let get = |name: &str, default: usize, len: usize| -> Result<Vec<usize>, EmbeddingError> {
            match attr_ints(node, name)? {
                None => Ok(vec![default; len]),
                Some(v) if v.len() == len && v.iter().all(|&x| x >= 0) => {
                    Ok(v.iter().map(|&x| x as usize).collect())
                }
                Some(v) => fail(format!("{}: bad '{name}' {v:?}", node.op_type)),
            }
        };
        let geom = Self {
            strides: get("strides", 1, nd)?,
            pads: get("pads", 0, 2 * nd)?,
            dilations: get("dilations", 1, nd)?,
            kernel,
        };
        if geom.strides.contains(&0) || geom.dilations.contains(&0) {
            return fail(format!("{}: zero stride or dilation", node.op_type));
        }
        Ok(geom)
    }

    fn out_len(&self, axis: usize, input: usize) -> Result<usize, EmbeddingError> {
        let nd = self.kernel.len();
        let padded = input + self.pads[axis] + self.pads[axis + nd];
        let span = self.dilations[axis] * (self.kernel[axis] - 1) + 1;
        if padded < span {
            return fail("window larger than padded input");
        }
        Ok((padded - span) / self.strides[axis] + 1)
    }
}

/// Lift a 1-D spatial op to 2-D by inserting a unit height axis.
fn spatial_2d(t: &Tensor) -> Result<(usize, usize, usize, usize), EmbeddingError> {
    match t.shape.as_slice() {
        &[n, c, l] => Ok((n, c, 1, l)),
        &[n, c, h, w] => Ok((n, c, h, w)),
        s => fail(format!("expected [N, C, L] or [N, C, H, W], got {s:?}")),
    }
}

fn geom_2d(g: &PoolGeom) -> PoolGeom {
    if g.kernel.len() == 2 {
        return PoolGeom {
            kernel: g.kernel.clone(),
            strides: g.strides.clone(),
            pads: g.pads.clone(),
            dilations: g.dilations.clone(),
        };
    }
    PoolGeom {
        kernel: vec![1, g.kernel[0]],
        strides: vec![1, g.strides[0]],
        pads: vec![0, g.pads[0], 0, g.pads[1]],
        dilations: vec![1, g.dilations[0]],
    }
}

fn conv(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let w = req(ins, 1)?;
    let bias = opt(ins, 2).map(|b| b.floats()).transpose()?;
    if w.rank() != x.rank() {
        return fail("Conv weight rank differs from input rank");
    }
    let (n, c, h, wd) = spatial_2d(x)?;
    let (m, cg, kh, kw) = spatial_2d(w)?;
    let group = attr_int(node, "group", 1)?.max(1) as usize;
    if c != cg * group || m % group != 0 {
        return fail(format!(
            "Conv channels {c} do not match weight {:?} with group {group}",
            w.shape
        ));
    }
    let spatial: Vec<usize> = w.shape[2..].to_vec();
    let geom = PoolGeom::read(node, spatial)?;
    let g = geom_2d(&geom);
    debug_assert_eq!(g.kernel, vec![kh, kw]);
    let oh = g.out_len(0, h)?;
    let ow = g.out_len(1, wd)?;
    let (xs, ws) = (x.floats()?, w.floats()?);
    if let Some(b) = bias {
        if b.len() != m {
            return fail("Conv bias length differs from output channels");
        }
    }
    let mg = m / group;
    let mut out = vec![0.0f32; n * m * oh * ow];
    for b in 0..n {
        for oc in 0..m {
            let gi = oc / mg;
            let base = bias.map_or(0.0, |bv| bv[oc]);
            let o = &mut out[((b * m + oc) * oh) * ow..((b * m + oc) * oh + oh) * ow];
            o.iter_mut().for_each(|v| *v = base);
            for icg in 0..cg {
                let ic = gi * cg + icg;
                let xplane = &xs[((b * c + ic) * h) * wd..((b * c + ic) * h + h) * wd];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = ws[((oc * cg + icg) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * g.strides[0] + ky * g.dilations[0]) as isize
                                - g.pads[0] as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                            let orow = &mut o[oy * ow..(oy + 1) * ow];
                            for (ox, dst) in orow.iter_mut().enumerate() {
                                let ix = (ox * g.strides[1] + kx * g.dilations[1]) as isize
                                    - g.pads[1] as isize;
                                if ix >= 0 && (ix as usize) < wd {
                                    *dst += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let shape = if x.rank() == 3 {
        vec![n, m, ow]
    } else {
        vec![n, m, oh, ow]
    };
    Ok(Tensor::f32(shape, out))
}

fn pool(node: &NodeProto, x: &Tensor, max: bool) -> Result<Tensor, EmbeddingError> {
    let kernel = match attr_ints(node, "kernel_shape")? {
        Some(k) if k.len() + 2 == x.rank() && k.iter().all(|&v| v > 0) => {
            k.iter().map(|&v| v as usize).collect()
        }
        _ => {
            return fail(format!(
                "{}: kernel_shape must match the spatial rank",
                node.op_type
            ))
        }
    };
    if attr_int(node, "ceil_mode", 0)? != 0 {
        return fail(format!("{}: ceil_mode is not supported", node.op_type));
    }
    let count_pad = attr_int(node, "count_include_pad", 0)? != 0;
    let geom = PoolGeom::read(node, kernel)?;
    let g = geom_2d(&geom);
    let (n, c, h, wd) = spatial_2d(x)?;
    let oh = g.out_len(0, h)?;
    let ow = g.out_len(1, wd)?;
    let xs = x.floats()?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in xs.chunks_exact(h * wd) {
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut acc, mut count) = (if max { f32::NEG_INFINITY } else { 0.0 }, 0usize);
                for ky in 0..g.kernel[0] {
                    for kx in 0..g.kernel[1] {
                        let iy =
                            (oy * g.strides[0] + ky * g.dilations[0]) as isize - g.pads[0] as isize;
                        let ix =
                            (ox * g.strides[1] + kx * g.dilations[1]) as isize - g.pads[1] as isize;
                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                            continue;
                        }
                        let v = plane[iy as usize * wd + ix as usize];
                        if max {
                            acc = acc.max(v);
                        } else {
                            acc += v;
                        }
                        count += 1;
                    }
                }
                let denom = if count_pad {
                    g.kernel[0] * g.kernel[1]
                } else {
                    count.max(1)
                };
                out.push(if max { acc } else { acc / denom as f32 });
            }
        }
    }
    let shape = if x.rank() == 3 {
        vec![n, c, ow]
    } else {
        vec![n, c, oh, ow]
    };
    Ok(Tensor::f32(shape, out))
}

/// Split `shape` around `axes` into (outer, reduced, inner) iteration for
/// a single axis at a time.
fn reduce_axis(
    t: &Tensor,
    axis: usize,
    f: &dyn Fn(&mut dyn Iterator<Item = f32>) -> f32,
) -> Result<Tensor, EmbeddingError> {
    let v = t.floats()?;
    let outer = numel(&t.shape[..axis]);
    let len = t.shape[axis];
    let inner = numel(&t.shape[axis + 1..]);
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut it = (0..len).map(|k| v[base + k * inner]);
            out.push(f(&mut it));
        }
    }
    let mut shape = t.shape.clone();
    shape[axis] = 1;
    Ok(Tensor::f32(shape, out))
}

fn reduce(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let axes = match (attr_ints(node, "axes")?, opt(ins, 1)) {
        (Some(a), _) => a,
        (None, Some(t)) => t.ints()?,
        (None, None) => Vec::new(),
    };
    let keep = attr_int(node, "keepdims", 1)? != 0;
    let axes: BTreeSet<usize> = if axes.is_empty() {
        if attr_int(node, "noop_with_empty_axes", 0)? != 0 {
            return Ok(x.clone());
        }
        (0..x.rank()).collect()
    } else {
        axes.iter()
            .map(|&a| norm_axis(a, x.rank()))
            .collect::<Result<_, _>>()?
    };
    let count: usize = axes.iter().map(|&a| x.shape[a]).product();
    if count == 0 {
        return fail(format!("{} over an empty axis", node.op_type));
    }
    let op = node.op_type.as_str();
    let step: &dyn Fn(&mut dyn Iterator<Item = f32>) -> f32 = match op {
        "ReduceMax" => &|it| it.fold(f32::NEG_INFINITY, f32::max),
        "ReduceL2" => &|it| it.map(|v| v * v).sum(),
        _ => &|it| it.sum(),
    };
    let mut t = x.clone();
    for &a in &axes {
        t = reduce_axis(&t, a, step)?;
    }
    t = match op {
        "ReduceMean" => unary(&t, |v| v / count as f32)?,
        "ReduceL2" => unary(&t, f32::sqrt)?,
        _ => t,
    };
    if !keep {
        let shape: Vec<usize> = t
            .shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        t = t.with_shape(shape)?;
    }
    Ok(t)
}

fn softmax(node: &NodeProto, x: &Tensor, opset: i64) -> Result<Tensor, EmbeddingError> {
    let v = x.floats()?;
    let rank = x.rank();
    let (outer, len, inner) = if opset < 13 {
        let axis = norm_axis(attr_int(node, "axis", 1)?, rank)?;
        (numel(&x.shape[..axis]), numel(&x.shape[axis..]), 1)
    } else {
        let axis = norm_axis(attr_int(node, "axis", -1)?, rank)?;
        (
            numel(&x.shape[..axis]),
            x.shape[axis],
            numel(&x.shape[axis + 1..]),
        )
    };
    let mut out = v.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| o * len * inner + k * inner + i;
            let m = (0..len)
                .map(|k| v[idx(k)])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for k in 0..len {
                let e = (v[idx(k)] - m).exp();
                out[idx(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[idx(k)] /= sum;
            }
        }
    }
    Ok(Tensor::f32(x.shape.clone(), out))
}

fn lp_normalize(node: &NodeProto, x: &Tensor) -> Result<Tensor, EmbeddingError> {
    let axis = norm_axis(attr_int(node, "axis", -1)?, x.rank())?;
    let p = attr_int(node, "p", 2)?;
    if p != 1 && p != 2 {
        return fail("LpNormalization supports p = 1 or 2");
    }
    let v = x.floats()?;
    let outer = numel(&x.shape[..axis]);
    let len = x.shape[axis];
    let inner = numel(&x.shape[axis + 1..]);
    let mut out = v.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| o * len * inner + k * inner + i;
            let norm: f32 = if p == 1 {
                (0..len).map(|k| v[idx(k)].abs()).sum()
            } else {
                (0..len).map(|k| v[idx(k)] * v[idx(k)]).sum::<f32>().sqrt()
            };
            if norm > 0.0 {
                for k in 0..len {
                    out[idx(k)] /= norm;
                }
            }
        }
    }
    Ok(Tensor::f32(x.shape.clone(), out))
}

fn batch_norm(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let [scale, bias, mean, var] = [1, 2, 3, 4].map(|i| req(ins, i).and_then(|t| t.floats()));
    let (scale, bias, mean, var) = (scale?, bias?, mean?, var?);
    let eps = attr_float(node, "epsilon", 1e-5)?;
    if x.rank() < 2 {
        return fail("BatchNormalization needs a channel axis");
    }
    let c = x.shape[1];
    if [scale, bias, mean, var].iter().any(|p| p.len() != c) {
        return fail("BatchNormalization parameters do not match the channel count");
    }
    let inner = numel(&x.shape[2..]);
    let v = x.floats()?;
    let out = v
        .iter()
        .enumerate()
        .map(|(i, &val)| {
            let ch = (i / inner) % c;
            (val - mean[ch]) / (var[ch] + eps).sqrt() * scale[ch] + bias[ch]
        })
        .collect();
    Ok(Tensor::f32(x.shape.clone(), out))
}

fn layer_norm(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let axis = norm_axis(attr_int(node, "axis", -1)?, x.rank())?;
    let eps = attr_float(node, "epsilon", 1e-5)?;
    let len = numel(&x.shape[axis..]);
    if len == 0 {
        return fail("LayerNormalization over an empty axis");
    }
    let v = x.floats()?;
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks_exact(len) {
        let mean = row.iter().sum::<f32>() / len as f32;
        let var = row.iter().map(|r| (r - mean) * (r - mean)).sum::<f32>() / len as f32;
        let inv = 1.0 / (var + eps).sqrt();
        out.extend(row.iter().map(|r| (r - mean) * inv));
    }
    let mut y = Tensor::f32(x.shape.clone(), out);
    if let Some(scale) = opt(ins, 1) {
        y = binary(&y, scale, |a, b| a * b, |_, _| None)?;
    }
    if let Some(bias) = opt(ins, 2) {
        y = binary(&y, bias, |a, b| a + b, |_, _| None)?;
    }
    Ok(y)
}

fn reshape(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let spec = req(ins, 1)?.ints()?;
    let allow_zero = attr_int(node, "allowzero", 0)? != 0;
    let mut shape = Vec::with_capacity(spec.len());
    let mut infer = None;
    for (i, &d) in spec.iter().enumerate() {
        match d {
            -1 if infer.is_none() => {
                infer = Some(i);
                shape.push(1);
            }
            0 if !allow_zero => match x.shape.get(i) {
                Some(&v) => shape.push(v),
                None => return fail("Reshape copies a dimension that does not exist"),
            },
            d if d >= 0 => shape.push(d as usize),
            _ => return fail(format!("invalid Reshape target {spec:?}")),
        }
    }
    if let Some(i) = infer {
        let known = numel(&shape);
        if known == 0 || !numel(&x.shape).is_multiple_of(known) {
            return fail(format!("cannot reshape {:?} to {spec:?}", x.shape));
        }
        shape[i] = numel(&x.shape) / known;
    }
    x.clone().with_shape(shape)
}

fn axes_arg(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Option<Vec<i64>>, EmbeddingError> {
    match attr_ints(node, "axes")? {
        Some(a) => Ok(Some(a)),
        None => opt(ins, 1).map(|t| t.ints()).transpose(),
    }
}

fn unsqueeze(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let Some(axes) = axes_arg(node, ins)? else {
        return fail("Unsqueeze needs axes");
    };
    let rank = x.rank() + axes.len();
    let mut set: Vec<usize> = axes
        .iter()
        .map(|&a| norm_axis(a, rank))
        .collect::<Result<_, _>>()?;
    set.sort_unstable();
    set.dedup();
    if set.len() != axes.len() {
        return fail("Unsqueeze axes repeat");
    }
    let mut shape = x.shape.clone();
    for a in set {
        shape.insert(a, 1);
    }
    x.clone().with_shape(shape)
}

fn squeeze(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let shape: Vec<usize> = match axes_arg(node, ins)? {
        None => x.shape.iter().copied().filter(|&d| d != 1).collect(),
        Some(axes) => {
            let set: BTreeSet<usize> = axes
                .iter()
                .map(|&a| norm_axis(a, x.rank()))
                .collect::<Result<_, _>>()?;
            if set.iter().any(|&a| x.shape[a] != 1) {
                return fail("Squeeze on an axis whose size is not 1");
            }
            x.shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !set.contains(i))
                .map(|(_, &d)| d)
                .collect()
        }
    };
    x.clone().with_shape(shape)
}

fn concat(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let parts: Vec<&Tensor> = ins.iter().flatten().copied().collect();
    let Some(first) = parts.first() else {
        return fail("Concat without inputs");
    };
    let axis = norm_axis(attr_int(node, "axis", 0)?, first.rank())?;
    let mut shape = first.shape.clone();
    shape[axis] = 0;
    for p in &parts {
        if p.rank() != first.rank()
            || p.shape
                .iter()
                .enumerate()
                .any(|(i, &d)| i != axis && d != first.shape[i])
        {
            return fail("Concat inputs differ outside the concat axis");
        }
        shape[axis] += p.shape[axis];
    }
    let outer = numel(&first.shape[..axis]);
    macro_rules! gather {
        ($variant:ident) => {{
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for p in &parts {
                    let Data::$variant(v) = &p.data else {
                        return fail("Concat on mixed types");
                    };
                    let block = numel(&p.shape[axis..]);
                    out.extend_from_slice(&v[o * block..(o + 1) * block]);
                }
            }
            Data::$variant(out)
        }};
    }
    let data = match first.data {
        Data::F32(_) => gather!(F32),
        Data::I64(_) => gather!(I64),
    };
    Ok(Tensor { shape, data })
}

fn gather(node: &NodeProto, ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let idx_t = req(ins, 1)?;
    let axis = norm_axis(attr_int(node, "axis", 0)?, x.rank())?;
    let len = x.shape[axis];
    let idx: Vec<usize> = idx_t
        .ints()?
        .iter()
        .map(|&i| {
            let j = if i < 0 { i + len as i64 } else { i };
            if j < 0 || j as usize >= len {
                fail(format!("Gather index {i} out of range {len}"))
            } else {
                Ok(j as usize)
            }
        })
        .collect::<Result<_, _>>()?;
    let outer = numel(&x.shape[..axis]);
    let inner = numel(&x.shape[axis + 1..]);
    let mut shape: Vec<usize> = x.shape[..axis].to_vec();
    shape.extend_from_slice(&idx_t.shape);
    shape.extend_from_slice(&x.shape[axis + 1..]);
    macro_rules! pick {
        ($v:expr) => {{
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for &i in &idx {
                    let start = (o * len + i) * inner;
                    out.extend_from_slice(&$v[start..start + inner]);
                }
            }
            out
        }};
    }
    let data = match &x.data {
        Data::F32(v) => Data::F32(pick!(v)),
        Data::I64(v) => Data::I64(pick!(v)),
    };
    Ok(Tensor { shape, data })
}

fn slice(ins: &[Option<&Tensor>]) -> Result<Tensor, EmbeddingError> {
    let x = req(ins, 0)?;
    let starts = req(ins, 1)?.ints()?;
    let ends = req(ins, 2)?.ints()?;
    let axes = match opt(ins, 3) {
        Some(t) => t.ints()?,
        None => (0..starts.len() as i64).collect(),
    };
    let steps = match opt(ins, 4) {
        Some(t) => t.ints()?,
        None => vec![1; starts.len()],
    };
    if ends.len() != starts.len() || axes.len() != starts.len() || steps.len() != starts.len() {
        return fail("Slice argument lengths differ");
    }
    // per-axis list of selected source indices
    let mut picks: Vec<Vec<usize>> = x.shape.iter().map(|&d| (0..d).collect()).collect();
    for k in 0..starts.len() {
        let a = norm_axis(axes[k], x.rank())?;
        let dim = x.shape[a] as i64;
        let step = steps[k];
        if step == 0 {
            return fail("Slice step 0");
        }
        let clampi = |v: i64, lo: i64, hi: i64| v.max(lo).min(hi);
        let fix = |v: i64| if v < 0 { v + dim } else { v };
        let mut sel = Vec::new();
        if step > 0 {
            let (s, e) = (clampi(fix(starts[k]), 0, dim), clampi(fix(ends[k]), 0, dim));
            let mut i = s;
            while i < e {
                sel.push(i as usize);
                i += step;
            }
        } else {
            let (s, e) = (
                clampi(fix(starts[k]), -1, dim - 1),
                clampi(fix(ends[k]), -1, dim - 1),
            );
            let mut i = s;
            while i > e {
                sel.push(i as usize);
                i += step;
            }
        }
        picks[a] = sel;
    }
    let shape: Vec<usize> = picks.iter().map(Vec::len).collect();
    let src = strides(&x.shape);
    let mut offsets = Vec::with_capacity(numel(&shape));
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel(&shape) {
        offsets.push(
            idx.iter()
                .enumerate()
                .map(|(d, &i)| picks[d][i] * src[d])
                .sum::<usize>(),
        );
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let data = match &x.data {
        Data::F32(v) => Data::F32(offsets.iter().map(|&o| v[o]).collect()),
        Data::I64(v) => Data::I64(offsets.iter().map(|&o| v[o]).collect()),
    };
    Ok(Tensor { shape, data })
}

fn constant(node: &NodeProto) -> Result<Tensor, EmbeddingError> {
    match node.attributes.first().map(|a| (a.name.as_str(), &a.value)) {
        Some(("value", AttributeValue::Tensor(t))) => Tensor::from_proto(t),
        Some(("value_float", AttributeValue::Float(f))) => Ok(Tensor::f32(vec![], vec![*f])),
        Some(("value_floats", AttributeValue::Floats(f))) => {
            Ok(Tensor::f32(vec![f.len()], f.clone()))
        }
        Some(("value_int", AttributeValue::Int(i))) => Ok(Tensor::i64(vec![], vec![*i])),
        Some(("value_ints", AttributeValue::Ints(i))) => Ok(Tensor::i64(vec![i.len()], i.clone())),
        _ => fail("Constant without a supported value attribute"),
    }
}

fn req<'a>(ins: &[Option<&'a Tensor>], i: usize) -> Result<&'a Tensor, EmbeddingError> {
    ins.get(i)
        .copied()
        .flatten()
        .ok_or_else(|| EmbeddingError::Inference(format!("missing input {i}")))
}

fn opt<'a>(ins: &[Option<&'a Tensor>], i: usize) -> Option<&'a Tensor> {
    ins.get(i).copied().flatten()
}

fn scalar_f32(t: Option<&Tensor>) -> Result<Option<f32>, EmbeddingError> {
    match t {
        None => Ok(None),
        Some(t) if t.shape.iter().product::<usize>() == 1 => Ok(Some(t.floats()?[0])),
        Some(_) => fail("expected a scalar"),
    }
}

fn eval(node: &NodeProto, ins: &[Option<&Tensor>], opset: i64) -> Result<Tensor, EmbeddingError> {
    let x = || req(ins, 0);
    let bin = |ff: fn(f32, f32) -> f32,
               fi: fn(i64, i64) -> Option<i64>|
     -> Result<Tensor, EmbeddingError> {
        let mut acc = req(ins, 0)?.clone();
        for t in ins.iter().skip(1).flatten() {
            acc = binary(&acc, t, ff, fi)?;
        }
        Ok(acc)
    };
    match node.op_type.as_str() {
        "Add" => bin(|a, b| a + b, i64::checked_add),
        "Sub" => bin(|a, b| a - b, i64::checked_sub),
        "Mul" => bin(|a, b| a * b, i64::checked_mul),
        "Div" => bin(|a, b| a / b, i64::checked_div),
        "Pow" => bin(f32::powf, |_, _| None),
        "Max" => bin(f32::max, |a, b| Some(a.max(b))),
        "Min" => bin(f32::min, |a, b| Some(a.min(b))),
        "Relu" => unary(x()?, |v| v.max(0.0)),
        "LeakyRelu" => {
            let alpha = attr_float(node, "alpha", 0.01)?;
            unary(x()?, |v| if v < 0.0 { alpha * v } else { v })
        }
        "Sigmoid" => unary(x()?, |v| 1.0 / (1.0 + (-v).exp())),
        "Tanh" => unary(x()?, f32::tanh),
        "Exp" => unary(x()?, f32::exp),
        "Log" => unary(x()?, f32::ln),
        "Sqrt" => unary(x()?, f32::sqrt),
        "Abs" => unary(x()?, f32::abs),
        "Neg" => unary(x()?, |v| -v),
        "Reciprocal" => unary(x()?, |v| 1.0 / v),
        "Erf" => unary(x()?, erf),
        "Clip" => {
            let lo =
                scalar_f32(opt(ins, 1))?.unwrap_or(attr_float(node, "min", f32::NEG_INFINITY)?);
            let hi = scalar_f32(opt(ins, 2))?.unwrap_or(attr_float(node, "max", f32::INFINITY)?);
            unary(x()?, |v| v.max(lo).min(hi))
        }
        "Identity" => Ok(x()?.clone()),
        "Constant" => constant(node),
        "MatMul" => matmul(x()?, req(ins, 1)?),
        "Gemm" => gemm(node, ins),
        "Conv" => conv(node, ins),
        "MaxPool" => pool(node, x()?, true),
        "AveragePool" => pool(node, x()?, false),
        "GlobalAveragePool" => {
            let t = x()?;
            if t.rank() < 3 {
                return fail("GlobalAveragePool needs spatial axes");
            }
            let (n, c) = (t.shape[0], t.shape[1]);
            let inner = numel(&t.shape[2..]).max(1);
            let v = t.floats()?;
            let out = v
                .chunks_exact(inner)
                .map(|ch| ch.iter().sum::<f32>() / inner as f32)
                .collect();
            let mut shape = vec![n, c];
            shape.extend(std::iter::repeat_n(1, t.rank() - 2));
            Ok(Tensor::f32(shape, out))
        }
        "BatchNormalization" => batch_norm(node, ins),
        "LayerNormalization" => layer_norm(node, ins),
        "ReduceMean" | "ReduceSum" | "ReduceMax" | "ReduceL2" => reduce(node, ins),
        "Softmax" => softmax(node, x()?, opset),
        "LpNormalization" => lp_normalize(node, x()?),
        "Reshape" => reshape(node, ins),
        "Flatten" => {
            let t = x()?;
            let axis = attr_int(node, "axis", 1)?;
            let axis = if axis < 0 {
                axis + t.rank() as i64
            } else {
                axis
            };
            if axis < 0 || axis as usize > t.rank() {
                return fail("Flatten axis out of range");
            }
            let a = axis as usize;
            t.clone()
                .with_shape(vec![numel(&t.shape[..a]), numel(&t.shape[a..])])
        }
        "Unsqueeze" => unsqueeze(node, ins),
        "Squeeze" => squeeze(node, ins),
        "Transpose" => {
            let t = x()?;
            let perm: Vec<usize> = match attr_ints(node, "perm")? {
                Some(p) => p.iter().map(|&v| v as usize).collect(),
                None => (0..t.rank()).rev().collect(),
            };
            transpose(t, &perm)
        }
        "Concat" => concat(node, ins),
        "Shape" => {
            let t = x()?;
            let r = t.rank() as i64;
            let clampi = |v: i64| (if v < 0 { v + r } else { v }).clamp(0, r) as usize;
            let start = clampi(attr_int(node, "start", 0)?);
            let end = clampi(attr_int(node, "end", r)?);
            let dims: Vec<i64> = t.shape[start..end.max(start)]
                .iter()
                .map(|&d| d as i64)
                .collect();
            Ok(Tensor::i64(vec![dims.len()], dims))
        }
        "Gather" => gather(node, ins),
        "Slice" => slice(ins),
        "Expand" => {
            let t = x()?;
            let target: Vec<usize> = req(ins, 1)?
                .ints()?
                .iter()
                .map(|&d| d.max(0) as usize)
                .collect();
            let shape = broadcast_shape(&t.shape, &target)?;
            let ones = match t.data {
                Data::F32(_) => Tensor::f32(shape.clone(), vec![0.0; numel(&shape)]),
                Data::I64(_) => Tensor::i64(shape.clone(), vec![0; numel(&shape)]),
            };
            binary(t, &ones, |a, b| a + b, |a, b| Some(a + b))
        }
        "Cast" => {
            let t = x()?;
            match (attr_int(node, "to", 0)? as i32, &t.data) {
                (DTYPE_FLOAT | DTYPE_DOUBLE, Data::F32(_))
                | (DTYPE_INT64 | DTYPE_INT32, Data::I64(_)) => Ok(t.clone()),
                (DTYPE_FLOAT | DTYPE_DOUBLE, Data::I64(v)) => Ok(Tensor::f32(
                    t.shape.clone(),
                    v.iter().map(|&i| i as f32).collect(),
                )),
                (DTYPE_INT64 | DTYPE_INT32, Data::F32(v)) => Ok(Tensor::i64(
                    t.shape.clone(),
                    v.iter().map(|&f| f as i64).collect(),
                )),
                (other, _) => fail(format!("Cast to unsupported type {other}")),
            }
        }
        other => fail(format!("unsupported operator {other}")),
    }
}

/// A validated ONNX graph ready to run.
#[derive(Debug)]
pub struct OnnxEncoder {
    id: String,
    opset: i64,
    input: String,
    input_rank: usize,
    output: String,
    dim: Option<usize>,
    constants: HashMap<String, Tensor>,
    nodes: Vec<NodeProto>,
    /// For each node, the values whose last use is that node.
    release: Vec<Vec<String>>,
}

impl OnnxEncoder {
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let bytes = std::fs::read(path).map_err(|e| EmbeddingError::ModelLoad {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::from_bytes(&bytes, &id).map_err(|e| match e {
            EmbeddingError::ModelLoad { reason, .. } => EmbeddingError::ModelLoad {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8], id: &str) -> Result<Self, EmbeddingError> {
        let load_err = |reason: String| EmbeddingError::ModelLoad {
            path: id.to_string(),
            reason,
        };
        let model =
            ModelProto::decode(bytes).map_err(|e| load_err(format!("not an ONNX model: {e}")))?;
        let Some(graph) = model.graph else {
            return Err(load_err("model has no graph".into()));
        };
        let opset = model
            .opsets
            .iter()
            .find(|(d, _)| d.is_empty() || d == "ai.onnx")
            .map_or(13, |(_, v)| *v);
        let (input, input_rank, output, dim) = check_signature(&graph)?;

        let unsupported: BTreeSet<&str> = graph
            .nodes
            .iter()
            .filter(|n| {
                !(n.domain.is_empty() || n.domain == "ai.onnx")
                    || !SUPPORTED_OPS.contains(&n.op_type.as_str())
            })
            .map(|n| n.op_type.as_str())
            .collect();
        if !unsupported.is_empty() {
            return Err(load_err(format!(
                "unsupported operators: {}",
                unsupported.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }

        let mut constants = HashMap::new();
        for init in &graph.initializers {
            let t = Tensor::from_proto(init).map_err(|e| load_err(e.to_string()))?;
            constants.insert(init.name.clone(), t);
        }

        let mut defined: BTreeSet<&str> = constants.keys().map(String::as_str).collect();
        defined.insert(&input);
        let mut last_use: HashMap<&str, usize> = HashMap::new();
        for (i, node) in graph.nodes.iter().enumerate() {
            for name in node.inputs.iter().filter(|n| !n.is_empty()) {
                if !defined.contains(name.as_str()) {
                    return Err(load_err(format!(
                        "node '{}' ({}) reads '{name}' before it is produced",
                        node.name, node.op_type
                    )));
                }
                last_use.insert(name, i);
            }
            defined.extend(node.outputs.iter().map(String::as_str));
        }
        if !defined.contains(output.as_str()) {
            return Err(load_err(format!("no node produces the output '{output}'")));
        }
        let mut release = vec![Vec::new(); graph.nodes.len()];
        for (name, i) in last_use {
            if name != output && !constants.contains_key(name) {
                release[i].push(name.to_string());
            }
        }

        Ok(Self {
            id: id.to_string(),
            opset,
            input,
            input_rank,
            output,
            dim,
            constants,
            nodes: graph.nodes,
            release,
        })
    }
}

/// Validate the waveform-in, embedding-out contract. Returns the input
/// name, its rank, the output name and the declared embedding size.
fn check_signature(
    graph: &GraphProto,
) -> Result<(String, usize, String, Option<usize>), EmbeddingError> {
    let init: BTreeSet<&str> = graph.initializers.iter().map(|t| t.name.as_str()).collect();
    let inputs: Vec<_> = graph
        .inputs
        .iter()
        .filter(|i| !init.contains(i.name.as_str()))
        .collect();
    if inputs.len() != 1 {
        return Err(EmbeddingError::Schema(format!(
            "expected exactly one waveform input, graph has {}",
            inputs.len()
        )));
    }
    if graph.outputs.len() != 1 {
        return Err(EmbeddingError::Schema(format!(
            "expected exactly one embedding output, graph has {}",
            graph.outputs.len()
        )));
    }
    let (inp, out) = (inputs[0], &graph.outputs[0]);
    for (what, info) in [("input", inp), ("output", out)] {
        if info.elem_type.is_some_and(|t| t != DTYPE_FLOAT) {
            return Err(EmbeddingError::Schema(format!(
                "{what} '{}' must be float32, found element type {}",
                info.name,
                info.elem_type.unwrap()
            )));
        }
    }
    let input_rank = match &inp.shape {
        None => 2,
        Some(dims) if dims.len() == 1 => 1,
        Some(dims) if dims.len() == 2 && !matches!(dims[0], Dim::Value(v) if v != 1) => 2,
        Some(dims) => {
            return Err(EmbeddingError::Schema(format!(
                "input must be [1 x samples] or [samples], declared rank {}",
                dims.len()
            )))
        }
    };
    let dim = match &out.shape {
        Some(dims) if dims.len() > 2 || dims.is_empty() => {
            return Err(EmbeddingError::Schema(format!(
                "output must be [1 x D] or [D], declared rank {}",
                dims.len()
            )))
        }
        Some(dims) => match dims.last() {
            Some(Dim::Value(v)) if *v > 0 => Some(*v as usize),
            _ => None,
        },
        None => None,
    };
    Ok((inp.name.clone(), input_rank, out.name.clone(), dim))
}

impl SpeakerEncoder for OnnxEncoder {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn encode(&self, samples: &[f32]) -> Result<Vec<f32>, EmbeddingError> {
        let shape = if self.input_rank == 1 {
            vec![samples.len()]
        } else {
            vec![1, samples.len()]
        };
        let mut values: HashMap<String, Tensor> = HashMap::new();
        values.insert(self.input.clone(), Tensor::f32(shape, samples.to_vec()));
        for (node, release) in self.nodes.iter().zip(&self.release) {
            let ins: Vec<Option<&Tensor>> = node
                .inputs
                .iter()
                .map(|n| {
                    if n.is_empty() {
                        None
                    } else {
                        values.get(n).or_else(|| self.constants.get(n))
                    }
                })
                .collect();
            let out = eval(node, &ins, self.opset).map_err(|e| match e {
                EmbeddingError::Inference(msg) => {
                    EmbeddingError::Inference(format!("{} '{}': {msg}", node.op_type, node.name))
                }
                other => other,
            })?;
            // only single-output nodes are supported; extra outputs
            // (BatchNormalization training statistics) stay undefined
            if let Some(name) = node.outputs.first() {
                values.insert(name.clone(), out);
            }
            for name in release {
                values.remove(name);
            }
        }
        let out = values
            .remove(&self.output)
            .or_else(|| self.constants.get(&self.output).cloned())
            .ok_or_else(|| EmbeddingError::Inference("output was not produced".into()))?;
        let rows: usize = out.shape.iter().rev().skip(1).product();
        if out.rank() == 0 || out.rank() > 2 || rows != 1 {
            return fail(format!(
                "expected a [1 x D] embedding, got shape {:?}",
                out.shape
            ));
        }
        Ok(out.floats()?.to_vec())
    }
}
