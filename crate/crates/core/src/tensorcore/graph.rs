//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the node vector is already a
//! topological order and every op's inputs precede it.

use crate::error::{Error, Result};

use super::kernels::{
    col2im, deform_col2im, deform_im2col, gemm, im2col, upsample_table, BilinearTaps, ColShape,
    ConvGeometry,
};
use super::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// One batch-hard triplet chosen during the forward pass.
#[derive(Clone, Copy, Debug)]
struct Triplet {
    anchor: usize,
    positive: usize,
    negative: usize,
    negative_in_prev: bool,
    d_pos: f64,
    d_neg: f64,
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    DeformConv2d {
        x: Var,
        w: Var,
        offsets: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    GlobalAvgPool {
        x: Var,
    },
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean {
        x: Var,
    },
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    SamplePoints {
        x: Var,
        batch: usize,
        points: Vec<(f64, f64)>,
    },
    Sum {
        x: Var,
    },
    WeightedSquaredError {
        pred: Var,
        target: Tensor,
        weight: f64,
    },
    BatchHardTriplet {
        current: Var,
        previous: Var,
        triplets: Vec<Triplet>,
        weight: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// A differentiation tape. Build it by calling the op methods, then call
/// [`Graph::backward`] on a scalar node.
pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: [usize; 4], b: [usize; 4], op: &'static str) -> Result<[usize; 4]> {
    const AXES: [&str; 4] = ["batch", "channel", "height", "width"];
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = if a[i] == b[i] || b[i] == 1 {
            a[i]
        } else if a[i] == 1 {
            b[i]
        } else {
            return Err(Error::Shape {
                op,
                axis: AXES[i],
                expected: a[i],
                got: b[i],
            });
        };
    }
    Ok(out)
}

/// Flat index into a tensor of `shape` for an output coordinate, treating
/// extent-1 axes as broadcast.
#[inline]
fn broadcast_index(shape: [usize; 4], n: usize, c: usize, h: usize, w: usize) -> usize {
    let n = if shape[0] == 1 { 0 } else { n };
    let c = if shape[1] == 1 { 0 } else { c };
    let h = if shape[2] == 1 { 0 } else { h };
    let w = if shape[3] == 1 { 0 } else { w };
    ((n * shape[1] + c) * shape[2] + h) * shape[3] + w
}

fn for_each_index(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let mut flat = 0;
    for n in 0..shape[0] {
        for c in 0..shape[1] {
            for h in 0..shape[2] {
                for w in 0..shape[3] {
                    f(flat, n, c, h, w);
                    flat += 1;
                }
            }
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Column `m` of a `[1, E, 1, M]` point-feature tensor.
fn point_vector(t: &Tensor, m: usize) -> Vec<f64> {
    (0..t.c()).map(|e| t.at(0, e, 0, m)).collect()
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A graph that never keeps backward caches; for inference.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.record;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Gradient accumulated on `v` by the last [`Graph::backward`], or zeros
    /// when the loss does not depend on it.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::from_vec(node.value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            let got = self.value(b).len();
            if got != channels {
                return Err(Error::Shape {
                    op,
                    axis: "bias",
                    expected: channels,
                    got,
                });
            }
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        const OP: &str = "conv2d";
        geom.validate(OP)?;
        let [n, c, h, wd] = self.shape(x);
        let [co, ci, kh, kw] = self.shape(w);
        if ci != c {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: c,
                got: ci,
            });
        }
        self.check_bias(b, co, OP)?;
        let s = ColShape {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            out_h: geom.out_extent(h, kh, OP)?,
            out_w: geom.out_extent(wd, kw, OP)?,
        };
        let (rows, p) = (s.rows(), s.cols());
        let needs_grad = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let keep = needs_grad && self.record;
        let mut out = Tensor::zeros([n, co, s.out_h, s.out_w]);
        let mut cols = vec![0.0; if keep { n * rows * p } else { rows * p }];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let in_per = c * h * wd;
            for i in 0..n {
                let col = if keep {
                    &mut cols[i * rows * p..(i + 1) * rows * p]
                } else {
                    &mut cols[..]
                };
                im2col(&xv[i * in_per..(i + 1) * in_per], s, geom, col);
                let dst = &mut out.data_mut()[i * co * p..(i + 1) * co * p];
                if let Some(b) = b {
                    let bv = self.nodes[b.0].value.data();
                    for (o, chunk) in dst.chunks_mut(p).enumerate() {
                        chunk.fill(bv[o]);
                    }
                }
                gemm(
                    co,
                    rows,
                    p,
                    wv,
                    false,
                    col,
                    false,
                    dst,
                    if b.is_some() { 1.0 } else { 0.0 },
                );
            }
        }
        if !keep {
            cols = Vec::new();
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            needs_grad,
        ))
    }

    /// Deformable convolution: every kernel tap samples the input
    /// bilinearly at its regular position plus a per-site learned offset.
    /// `offsets` has `2·kh·kw` channels laid out as `(dx, dy)` per tap.
    pub fn deform_conv2d(
        &mut self,
        x: Var,
        w: Var,
        offsets: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "deform_conv2d";
        let geom = ConvGeometry {
            stride,
            padding,
            dilation: 1,
        };
        geom.validate(OP)?;
        let [n, c, h, wd] = self.shape(x);
        let [co, ci, kh, kw] = self.shape(w);
        if ci != c {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: c,
                got: ci,
            });
        }
        self.check_bias(b, co, OP)?;
        let s = ColShape {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            out_h: geom.out_extent(h, kh, OP)?,
            out_w: geom.out_extent(wd, kw, OP)?,
        };
        let [on, oc, oh, ow] = self.shape(offsets);
        if oc != 2 * kh * kw {
            return Err(Error::Shape {
                op: OP,
                axis: "offset channel",
                expected: 2 * kh * kw,
                got: oc,
            });
        }
        for (axis, expected, got) in [
            ("batch", n, on),
            ("height", s.out_h, oh),
            ("width", s.out_w, ow),
        ] {
            if expected != got {
                return Err(Error::Shape {
                    op: OP,
                    axis,
                    expected,
                    got,
                });
            }
        }
        let (rows, p) = (s.rows(), s.cols());
        let needs_grad =
            self.rg(x) || self.rg(w) || self.rg(offsets) || b.is_some_and(|b| self.rg(b));
        let keep = needs_grad && self.record;
        let mut out = Tensor::zeros([n, co, s.out_h, s.out_w]);
        let mut cols = vec![0.0; if keep { n * rows * p } else { rows * p }];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let ov = self.value(offsets).data();
            let in_per = c * h * wd;
            let off_per = oc * p;
            for i in 0..n {
                let col = if keep {
                    &mut cols[i * rows * p..(i + 1) * rows * p]
                } else {
                    &mut cols[..]
                };
                deform_im2col(
                    &xv[i * in_per..(i + 1) * in_per],
                    &ov[i * off_per..(i + 1) * off_per],
                    s,
                    geom,
                    col,
                );
                let dst = &mut out.data_mut()[i * co * p..(i + 1) * co * p];
                if let Some(b) = b {
                    let bv = self.nodes[b.0].value.data();
                    for (o, chunk) in dst.chunks_mut(p).enumerate() {
                        chunk.fill(bv[o]);
                    }
                }
                gemm(
                    co,
                    rows,
                    p,
                    wv,
                    false,
                    col,
                    false,
                    dst,
                    if b.is_some() { 1.0 } else { 0.0 },
                );
            }
        }
        if !keep {
            cols = Vec::new();
        }
        Ok(self.push(
            out,
            Op::DeformConv2d {
                x,
                w,
                offsets,
                b,
                geom,
                cols,
            },
            needs_grad,
        ))
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!(
                "maxpool2: input {h}x{w} smaller than 2x2"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(out.len());
        let mut k = 0;
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                let plane = xv.plane(ni, ci);
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = (2 * y) * w + 2 * xx;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = (2 * y + dy) * w + 2 * xx + dx;
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                        out.data_mut()[k] = plane[best];
                        argmax.push(base + best);
                        k += 1;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Fixed bilinear ×2 upsampling (half-pixel centres, edge clamped).
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        if h == 0 || w == 0 {
            return Err(Error::invalid("upsample2: empty input"));
        }
        let ty = upsample_table(h);
        let tx = upsample_table(w);
        let xv = self.value(x);
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        let ow = 2 * w;
        for ni in 0..n {
            for ci in 0..c {
                let plane = xv.plane(ni, ci);
                let base = (ni * c + ci) * 4 * h * w;
                let dst = &mut out.data_mut()[base..base + 4 * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        dst[oy * ow + ox] = (1.0 - fy)
                            * ((1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1])
                            + fy * ((1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Upsample2 { x }, rg))
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat: no inputs"))?;
        let [n, _, h, w] = self.shape(first);
        let mut total_c = 0;
        for &v in xs {
            let s = self.shape(v);
            for (axis, i, e) in [("batch", 0, n), ("height", 2, h), ("width", 3, w)] {
                if s[i] != e {
                    return Err(Error::Shape {
                        op: "concat",
                        axis,
                        expected: e,
                        got: s[i],
                    });
                }
            }
            total_c += s[1];
        }
        let hw = h * w;
        let mut out = Tensor::zeros([n, total_c, h, w]);
        for ni in 0..n {
            let mut c0 = 0;
            for &v in xs {
                let t = self.value(v);
                let c = t.c();
                let src = &t.data()[ni * c * hw..(ni + 1) * c * hw];
                let start = (ni * total_c + c0) * hw;
                out.data_mut()[start..start + c * hw].copy_from_slice(src);
                c0 += c;
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, op: &'static str) -> Result<Tensor> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let shape = broadcast_shape(sa, sb, op)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Tensor::zeros(shape);
        let o = out.data_mut();
        let mul = op == "mul";
        for_each_index(shape, |flat, n, c, h, w| {
            let x = av[broadcast_index(sa, n, c, h, w)];
            let y = bv[broadcast_index(sb, n, c, h, w)];
            o[flat] = if mul { x * y } else { x + y };
        });
        Ok(out)
    }

    /// Elementwise product with broadcasting over extent-1 axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "mul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// Elementwise sum with broadcasting over extent-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary(a, b, "add")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, k }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let t = self.value(x);
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for ni in 0..n {
            for ci in 0..c {
                out.data_mut()[ni * c + ci] = t.plane(ni, ci).iter().sum::<f64>() / (h * w) as f64;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvgPool { x }, rg)
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let t = self.value(x);
        let mut out = Tensor::zeros([n, c, 1, 1]);
        let mut argmax = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                let plane = t.plane(ni, ci);
                let mut best = 0;
                for (i, &v) in plane.iter().enumerate() {
                    if v > plane[best] {
                        best = i;
                    }
                }
                out.data_mut()[ni * c + ci] = plane[best];
                argmax.push((ni * c + ci) * h * w + best);
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::GlobalMaxPool { x, argmax }, rg)
    }

    /// Mean across channels at every pixel, `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let hw = h * w;
        let t = self.value(x).data();
        let mut out = Tensor::zeros([n, 1, h, w]);
        for ni in 0..n {
            let dst = &mut out.data_mut()[ni * hw..(ni + 1) * hw];
            for ci in 0..c {
                let src = &t[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d /= c as f64;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::ChannelMean { x }, rg)
    }

    /// Max across channels at every pixel, `[N,C,H,W] -> [N,1,H,W]`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let hw = h * w;
        let t = self.value(x).data();
        let mut out = Tensor::zeros([n, 1, h, w]);
        let mut argmax = vec![0usize; n * hw];
        for ni in 0..n {
            for p in 0..hw {
                let mut best = (ni * c) * hw + p;
                for ci in 1..c {
                    let idx = (ni * c + ci) * hw + p;
                    if t[idx] > t[best] {
                        best = idx;
                    }
                }
                out.data_mut()[ni * hw + p] = t[best];
                argmax[ni * hw + p] = best;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::ChannelMax { x, argmax }, rg)
    }

    /// Fully connected layer over the flattened `C·H·W` features of each
    /// sample. `w` has shape `[out, C·H·W, 1, 1]`; the result is
    /// `[N, out, 1, 1]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        const OP: &str = "fully_connected";
        let [n, c, h, wd] = self.shape(x);
        let [co, ci, kh, kw] = self.shape(w);
        let fan_in = c * h * wd;
        if ci * kh * kw != fan_in {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: fan_in,
                got: ci * kh * kw,
            });
        }
        self.check_bias(b, co, OP)?;
        let mut out = Tensor::zeros([n, co, 1, 1]);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            if let Some(b) = b {
                let bv = self.value(b).data();
                for row in out.data_mut().chunks_mut(co) {
                    row.copy_from_slice(bv);
                }
            }
            // out[n×co] = x[n×fan_in] · wᵀ
            gemm(
                n,
                fan_in,
                co,
                xv,
                false,
                wv,
                true,
                out.data_mut(),
                if b.is_some() { 1.0 } else { 0.0 },
            );
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Normalize the channel vector at every pixel to unit L2 norm. A zero
    /// vector stays zero.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let hw = h * w;
        let t = self.value(x).data();
        let mut out = Tensor::zeros([n, c, h, w]);
        let mut norms = vec![0.0; n * hw];
        for ni in 0..n {
            for p in 0..hw {
                let sq: f64 = (0..c).map(|ci| t[(ni * c + ci) * hw + p].powi(2)).sum();
                let norm = sq.sqrt();
                norms[ni * hw + p] = norm;
                if norm > 0.0 {
                    for ci in 0..c {
                        let idx = (ni * c + ci) * hw + p;
                        out.data_mut()[idx] = t[idx] / norm;
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::L2Normalize { x, norms }, rg)
    }

    /// Bilinearly sample the channel vectors of batch item `batch` at
    /// continuous pixel coordinates (pixel `(i, j)` has its centre at
    /// `(j + 0.5, i + 0.5)`). Returns `[1, C, 1, M]`.
    pub fn sample_points(&mut self, x: Var, batch: usize, points: &[(f64, f64)]) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        if batch >= n {
            return Err(Error::OutOfBounds {
                what: "batch item",
                index: batch,
                detail: format!("batch has {n} items"),
            });
        }
        for (i, &(px, py)) in points.iter().enumerate() {
            if !(px >= 0.0 && px < w as f64 && py >= 0.0 && py < h as f64) {
                return Err(Error::OutOfBounds {
                    what: "point",
                    index: i,
                    detail: format!("({px}, {py}) outside {w}x{h}"),
                });
            }
        }
        let m = points.len();
        let t = self.value(x);
        let mut out = Tensor::zeros([1, c, 1, m]);
        for (j, &(px, py)) in points.iter().enumerate() {
            let taps = BilinearTaps::new(py - 0.5, px - 0.5, h, w);
            for ci in 0..c {
                out.data_mut()[ci * m + j] = taps.sample(t.plane(batch, ci));
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::SamplePoints {
                x,
                batch,
                points: points.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum { x }, rg)
    }

    /// `weight · Σ (pred − target)²` as a scalar.
    pub fn weighted_squared_error(
        &mut self,
        pred: Var,
        target: &Tensor,
        weight: f64,
    ) -> Result<Var> {
        let ps = self.shape(pred);
        let ts = target.shape();
        const AXES: [&str; 4] = ["batch", "channel", "height", "width"];
        for i in 0..4 {
            if ps[i] != ts[i] {
                return Err(Error::Shape {
                    op: "weighted_squared_error",
                    axis: AXES[i],
                    expected: ts[i],
                    got: ps[i],
                });
            }
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(weight * s),
            Op::WeightedSquaredError {
                pred,
                target: if rg && self.record {
                    target.clone()
                } else {
                    Tensor::zeros([0, 0, 0, 0])
                },
                weight,
            },
            rg,
        ))
    }

    /// Batch-hard triplet margin loss between point embeddings of the
    /// current frame (`[1,E,1,M]`) and the earlier frame (`[1,E,1,K]`).
    ///
    /// Each current-frame point whose identity also occurs in the earlier
    /// frame is an anchor. Its positive is the same identity in the earlier
    /// frame; its negative is the nearest embedding of any other identity in
    /// either frame. Returns the mean hinge over anchors and the anchor
    /// count; with no valid anchor the loss is a constant zero.
    pub fn batch_hard_triplet(
        &mut self,
        current: Var,
        current_ids: &[u64],
        previous: Var,
        previous_ids: &[u64],
        margin: f64,
    ) -> Result<(Var, usize)> {
        const OP: &str = "batch_hard_triplet";
        let cs = self.shape(current);
        let ps = self.shape(previous);
        if cs[1] != ps[1] {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: cs[1],
                got: ps[1],
            });
        }
        if cs[3] != current_ids.len() || ps[3] != previous_ids.len() {
            return Err(Error::invalid(format!(
                "{OP}: {} / {} identities for {} / {} embeddings",
                current_ids.len(),
                previous_ids.len(),
                cs[3],
                ps[3]
            )));
        }
        let cur: Vec<Vec<f64>> = (0..cs[3])
            .map(|m| point_vector(self.value(current), m))
            .collect();
        let prev: Vec<Vec<f64>> = (0..ps[3])
            .map(|m| point_vector(self.value(previous), m))
            .collect();
        let mut triplets = Vec::new();
        for (i, &id) in current_ids.iter().enumerate() {
            let Some(pos) = previous_ids.iter().position(|&p| p == id) else {
                continue;
            };
            let mut best: Option<(f64, usize, bool)> = None;
            let candidates = current_ids
                .iter()
                .enumerate()
                .filter(|&(_, &o)| o != id)
                .map(|(j, _)| (euclidean(&cur[i], &cur[j]), j, false))
                .chain(
                    previous_ids
                        .iter()
                        .enumerate()
                        .filter(|&(_, &o)| o != id)
                        .map(|(j, _)| (euclidean(&cur[i], &prev[j]), j, true)),
                );
            for cand in candidates {
                if best.is_none_or(|b| cand.0 < b.0) {
                    best = Some(cand);
                }
            }
            let Some((d_neg, negative, negative_in_prev)) = best else {
                continue;
            };
            triplets.push(Triplet {
                anchor: i,
                positive: pos,
                negative,
                negative_in_prev,
                d_pos: euclidean(&cur[i], &prev[pos]),
                d_neg,
            });
        }
        let m = triplets.len();
        let loss = if m == 0 {
            0.0
        } else {
            triplets
                .iter()
                .map(|t| (t.d_pos - t.d_neg + margin).max(0.0))
                .sum::<f64>()
                / m as f64
        };
        // Only active hinges carry gradient.
        triplets.retain(|t| t.d_pos - t.d_neg + margin > 0.0);
        let weight = if m == 0 { 0.0 } else { 1.0 / m as f64 };
        let rg = (self.rg(current) || self.rg(previous)) && m > 0;
        let var = self.push(
            Tensor::scalar(loss),
            Op::BatchHardTriplet {
                current,
                previous,
                triplets,
                weight,
            },
            rg,
        );
        Ok((var, m))
    }

    /// Reverse sweep from the scalar `loss`, seeding its gradient with 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_seeded(loss, 1.0)
    }

    /// Reverse sweep from the scalar `loss` with gradient seed `seed`.
    pub fn backward_seeded(&mut self, loss: Var, seed: f64) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be a scalar, got shape {shape:?}"
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, delta) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&delta) {
                            *a += d;
                        }
                    }
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let [n, c, h, wd] = self.shape(*x);
                let [co, _, kh, kw] = self.shape(*w);
                let s = ColShape {
                    channels: c,
                    height: h,
                    width: wd,
                    kh,
                    kw,
                    out_h: out_shape[2],
                    out_w: out_shape[3],
                };
                let (rows, p) = (s.rows(), s.cols());
                let wv = self.value(*w).data();
                let mut dw = vec![0.0; co * rows];
                let mut dx = self.rg(*x).then(|| vec![0.0; n * c * h * wd]);
                let mut dcol = vec![0.0; rows * p];
                for ni in 0..n {
                    let go = &g[ni * co * p..(ni + 1) * co * p];
                    let col = &cols[ni * rows * p..(ni + 1) * rows * p];
                    if self.rg(*w) {
                        gemm(co, p, rows, go, false, col, true, &mut dw, 1.0);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(rows, co, p, wv, true, go, false, &mut dcol, 0.0);
                        let per = c * h * wd;
                        col2im(&dcol, s, *geom, &mut dx[ni * per..(ni + 1) * per]);
                    }
                }
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                if self.rg(*w) {
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    res.push((*b, bias_grad(g, n, co, p)));
                }
            }
            Op::DeformConv2d {
                x,
                w,
                offsets,
                b,
                geom,
                cols,
            } => {
                let [n, c, h, wd] = self.shape(*x);
                let [co, _, kh, kw] = self.shape(*w);
                let s = ColShape {
                    channels: c,
                    height: h,
                    width: wd,
                    kh,
                    kw,
                    out_h: out_shape[2],
                    out_w: out_shape[3],
                };
                let (rows, p) = (s.rows(), s.cols());
                let wv = self.value(*w).data();
                let xv = self.value(*x).data();
                let ov = self.value(*offsets).data();
                let oc = 2 * kh * kw;
                let mut dw = vec![0.0; co * rows];
                let mut dx = self.rg(*x).then(|| vec![0.0; n * c * h * wd]);
                let mut doff = self.rg(*offsets).then(|| vec![0.0; n * oc * p]);
                let mut dcol = vec![0.0; rows * p];
                let per = c * h * wd;
                for ni in 0..n {
                    let go = &g[ni * co * p..(ni + 1) * co * p];
                    let col = &cols[ni * rows * p..(ni + 1) * rows * p];
                    if self.rg(*w) {
                        gemm(co, p, rows, go, false, col, true, &mut dw, 1.0);
                    }
                    if dx.is_some() || doff.is_some() {
                        gemm(rows, co, p, wv, true, go, false, &mut dcol, 0.0);
                        deform_col2im(
                            &xv[ni * per..(ni + 1) * per],
                            &ov[ni * oc * p..(ni + 1) * oc * p],
                            &dcol,
                            s,
                            *geom,
                            dx.as_mut().map(|d| &mut d[ni * per..(ni + 1) * per]),
                            doff.as_mut()
                                .map(|d| &mut d[ni * oc * p..(ni + 1) * oc * p]),
                        );
                    }
                }
                if let Some(dx) = dx {
                    res.push((*x, dx));
                }
                if let Some(doff) = doff {
                    res.push((*offsets, doff));
                }
                if self.rg(*w) {
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    res.push((*b, bias_grad(g, n, co, p)));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (k, &src) in argmax.iter().enumerate() {
                    dx[src] += g[k];
                }
                res.push((*x, dx));
            }
            Op::Upsample2 { x } => {
                let [n, c, h, w] = self.shape(*x);
                let ty = upsample_table(h);
                let tx = upsample_table(w);
                let mut dx = vec![0.0; n * c * h * w];
                let ow = 2 * w;
                for nc in 0..n * c {
                    let src = &g[nc * 4 * h * w..(nc + 1) * 4 * h * w];
                    let dst = &mut dx[nc * h * w..(nc + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let go = src[oy * ow + ox];
                            dst[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * go;
                            dst[y0 * w + x1] += (1.0 - fy) * fx * go;
                            dst[y1 * w + x0] += fy * (1.0 - fx) * go;
                            dst[y1 * w + x1] += fy * fx * go;
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::Concat { xs } => {
                let [n, total_c, h, w] = out_shape;
                let hw = h * w;
                let mut c0 = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.rg(v) {
                        let mut dx = vec![0.0; n * c * hw];
                        for ni in 0..n {
                            let start = (ni * total_c + c0) * hw;
                            dx[ni * c * hw..(ni + 1) * c * hw]
                                .copy_from_slice(&g[start..start + c * hw]);
                        }
                        res.push((v, dx));
                    }
                    c0 += c;
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                res.push((
                    *x,
                    xv.iter()
                        .zip(g)
                        .map(|(&v, &gg)| if v > 0.0 { gg } else { 0.0 })
                        .collect(),
                ));
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                res.push((
                    *x,
                    y.iter()
                        .zip(g)
                        .map(|(&s, &gg)| gg * s * (1.0 - s))
                        .collect(),
                ));
            }
            Op::Mul { a, b } | Op::Add { a, b } => {
                let is_mul = matches!(node.op, Op::Mul { .. });
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for_each_index(out_shape, |flat, n, c, h, w| {
                    let ia = broadcast_index(sa, n, c, h, w);
                    let ib = broadcast_index(sb, n, c, h, w);
                    if is_mul {
                        da[ia] += g[flat] * bv[ib];
                        db[ib] += g[flat] * av[ia];
                    } else {
                        da[ia] += g[flat];
                        db[ib] += g[flat];
                    }
                });
                res.push((*a, da));
                res.push((*b, db));
            }
            Op::Scale { x, k } => res.push((*x, g.iter().map(|v| v * k).collect())),
            Op::GlobalAvgPool { x } => {
                let [n, c, h, w] = self.shape(*x);
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for nc in 0..n * c {
                    dx[nc * hw..(nc + 1) * hw].fill(g[nc] / hw as f64);
                }
                res.push((*x, dx));
            }
            Op::GlobalMaxPool { x, argmax } | Op::ChannelMax { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (k, &src) in argmax.iter().enumerate() {
                    dx[src] += g[k];
                }
                res.push((*x, dx));
            }
            Op::ChannelMean { x } => {
                let [n, c, h, w] = self.shape(*x);
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for ni in 0..n {
                    for ci in 0..c {
                        let dst = &mut dx[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                        for (d, s) in dst.iter_mut().zip(&g[ni * hw..(ni + 1) * hw]) {
                            *d = s / c as f64;
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::Linear { x, w, b } => {
                let n = self.shape(*x)[0];
                let co = out_shape[1];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let fan_in = xv.len() / n;
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * fan_in];
                    gemm(n, co, fan_in, g, false, wv, false, &mut dx, 0.0);
                    res.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; co * fan_in];
                    gemm(co, n, fan_in, g, true, xv, false, &mut dw, 0.0);
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    res.push((*b, bias_grad(g, n, co, 1)));
                }
            }
            Op::L2Normalize { x, norms } => {
                let [n, c, h, w] = out_shape;
                let hw = h * w;
                let y = node.value.data();
                let mut dx = vec![0.0; n * c * hw];
                for ni in 0..n {
                    for p in 0..hw {
                        let norm = norms[ni * hw + p];
                        if norm == 0.0 {
                            continue;
                        }
                        let idx = |ci: usize| (ni * c + ci) * hw + p;
                        let dot: f64 = (0..c).map(|ci| y[idx(ci)] * g[idx(ci)]).sum();
                        for ci in 0..c {
                            dx[idx(ci)] = (g[idx(ci)] - y[idx(ci)] * dot) / norm;
                        }
                    }
                }
                res.push((*x, dx));
            }
            Op::SamplePoints { x, batch, points } => {
                let [_, c, h, w] = self.shape(*x);
                let m = points.len();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (j, &(px, py)) in points.iter().enumerate() {
                    let taps = BilinearTaps::new(py - 0.5, px - 0.5, h, w);
                    for ci in 0..c {
                        let start = (batch * c + ci) * h * w;
                        taps.scatter(&mut dx[start..start + h * w], g[ci * m + j]);
                    }
                }
                res.push((*x, dx));
            }
            Op::Sum { x } => res.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::WeightedSquaredError {
                pred,
                target,
                weight,
            } => {
                let pv = self.value(*pred).data();
                res.push((
                    *pred,
                    pv.iter()
                        .zip(target.data())
                        .map(|(p, t)| 2.0 * weight * (p - t) * g[0])
                        .collect(),
                ));
            }
            Op::BatchHardTriplet {
                current,
                previous,
                triplets,
                weight,
            } => {
                let cv = self.value(*current);
                let pv = self.value(*previous);
                let (e, mc, mp) = (cv.c(), cv.w(), pv.w());
                let mut dc = vec![0.0; cv.len()];
                let mut dp = vec![0.0; pv.len()];
                // the distance gradient at zero distance is taken as zero
                let unit = |d: f64| if d > 0.0 { g[0] * weight / d } else { 0.0 };
                for t in triplets {
                    let (sp, sn) = (unit(t.d_pos), unit(t.d_neg));
                    for k in 0..e {
                        let a = cv.at(0, k, 0, t.anchor);
                        let p = pv.at(0, k, 0, t.positive);
                        let nvec = if t.negative_in_prev {
                            pv.at(0, k, 0, t.negative)
                        } else {
                            cv.at(0, k, 0, t.negative)
                        };
                        let gp = sp * (a - p);
                        let gn = sn * (a - nvec);
                        dc[k * mc + t.anchor] += gp - gn;
                        dp[k * mp + t.positive] -= gp;
                        if t.negative_in_prev {
                            dp[k * mp + t.negative] += gn;
                        } else {
                            dc[k * mc + t.negative] += gn;
                        }
                    }
                }
                res.push((*current, dc));
                res.push((*previous, dp));
            }
        }
        res
    }
}

fn bias_grad(g: &[f64], n: usize, co: usize, p: usize) -> Vec<f64> {
    let mut db = vec![0.0; co];
    for ni in 0..n {
        for (o, d) in db.iter_mut().enumerate() {
            *d += g[(ni * co + o) * p..(ni * co + o + 1) * p]
                .iter()
                .sum::<f64>();
        }
    }
    db
}
