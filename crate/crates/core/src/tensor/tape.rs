use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        filters: Var,
        bias: Var,
        stride: usize,
        /// im2col matrix of the input, `[C·k·k, H'·W']`.
        cols: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    Slice {
        x: Var,
        offset: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    Upsample2x {
        x: Var,
    },
    L1At {
        x: Var,
        indices: Vec<usize>,
        targets: Vec<f64>,
    },
    L1To {
        x: Var,
        target: Vec<f64>,
    },
    EdgeSmooth {
        x: Var,
        width: usize,
        weight_x: Vec<f64>,
        weight_y: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
///
/// Nodes are appended as operations execute, so every node's parents precede
/// it. [`Tape::backward`] consumes the tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn conv_out(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, ho: usize, wo: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let plane = ho * wo;
    let mut cols = vec![0.0; c * k * k * plane];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = srow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], dx: &mut [f64], c: usize, h: usize, w: usize, k: usize, stride: usize, ho: usize, wo: usize) {
    let pad = (k - 1) / 2;
    let plane = ho * wo;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Zero-padded "same" convolution of `input: [C,H,W]` with
    /// `filters: [O,C,k,k]`, producing `[O, ceil(H/s), ceil(W/s)]`.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Var, stride: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let fshape = self.value(filters).shape().to_vec();
        let [o, fc, k, k2] = fshape[..] else {
            return Err(Error::config(format!("filters must be [O,C,k,k], got {fshape:?}")));
        };
        if fc != c {
            return Err(Error::config(format!(
                "conv2d: input has {c} channels, filters expect {fc}"
            )));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::config(format!("conv2d: kernel must be odd and square, got {k}x{k2}")));
        }
        if self.value(bias).shape() != [o] {
            return Err(Error::config(format!(
                "conv2d: bias shape {:?} does not match {o} output channels",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
        let plane = ho * wo;
        let ckk = c * k * k;
        let cols = im2col(self.value(input).data(), c, h, w, k, stride, ho, wo);
        let mut out = vec![0.0; o * plane];
        for (oc, b) in self.value(bias).data().iter().enumerate() {
            out[oc * plane..(oc + 1) * plane].fill(*b);
        }
        gemm(o, ckk, plane, self.value(filters).data(), false, &cols, false, 1.0, &mut out);
        let needs = self.needs(input) || self.needs(filters) || self.needs(bias);
        let value = Tensor::new(vec![o, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                filters,
                bias,
                stride,
                cols,
            },
            needs,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope }, needs)
    }

    /// Per-channel mean of a `[C,H,W]` tensor.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![c], data)?, Op::GlobalAvgPool { x }, needs))
    }

    /// `w·x + b` for `x: [n]`, `w: [m,n]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        let (m, wn) = match self.value(w).shape()[..] {
            [m, wn] => (m, wn),
            ref s => return Err(Error::config(format!("linear: weight must be [m,n], got {s:?}"))),
        };
        if wn != n || self.value(b).len() != m {
            return Err(Error::config(format!(
                "linear: weight [{m},{wn}], input [{n}], bias [{}] do not conform",
                self.value(b).len()
            )));
        }
        let mut out = self.value(b).data().to_vec();
        gemm(m, n, 1, self.value(w).data(), false, self.value(x).data(), false, 1.0, &mut out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::vector(out), Op::Linear { x, w, b }, needs))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::config(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Scale { x, factor }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Contiguous run of `x`'s flattened data starting at `offset`, viewed as `shape`.
    pub fn slice(&mut self, x: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if offset + n > src.len() {
            return Err(Error::config(format!(
                "slice [{offset}, {}) out of range for length {}",
                offset + n,
                src.len()
            )));
        }
        let value = Tensor::new(shape.to_vec(), src[offset..offset + n].to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Slice { x, offset }, needs))
    }

    /// Channel concatenation of `[C_i,H,W]` tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor::concat_channels(&tensors)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, needs))
    }

    /// Nearest-neighbour 2x upsampling of `[C,H,W]`, cropped to `height × width`.
    pub fn upsample2x(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if height.div_ceil(2) != h || width.div_ceil(2) != w {
            return Err(Error::config(format!(
                "upsample2x: {h}x{w} cannot produce {height}x{width}"
            )));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; c * height * width];
        for ci in 0..c {
            for y in 0..height {
                for xx in 0..width {
                    out[(ci * height + y) * width + xx] = src[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![c, height, width], out)?, Op::Upsample2x { x }, needs))
    }

    /// Mean absolute difference between `x[indices[i]]` and `targets[i]`.
    pub fn l1_at(&mut self, x: Var, indices: Vec<usize>, targets: Vec<f64>) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::Usage("l1_at needs at least one index".into()));
        }
        if indices.len() != targets.len() {
            return Err(Error::config("l1_at: indices and targets differ in length"));
        }
        let xv = self.value(x).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::config(format!("l1_at: index {bad} out of range")));
        }
        let s: f64 = indices.iter().zip(&targets).map(|(&i, t)| (xv[i] - t).abs()).sum();
        let value = Tensor::scalar(s / indices.len() as f64);
        let needs = self.needs(x);
        Ok(self.push(value, Op::L1At { x, indices, targets }, needs))
    }

    /// Mean absolute difference between `x` and a constant `target`.
    pub fn l1_to(&mut self, x: Var, target: Vec<f64>) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != target.len() {
            return Err(Error::config("l1_to: length mismatch"));
        }
        let s: f64 = xv.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
        let value = Tensor::scalar(s / xv.len() as f64);
        let needs = self.needs(x);
        Ok(self.push(value, Op::L1To { x, target }, needs))
    }

    /// Weighted total variation of a map with `height·width` values:
    /// `(1/HW) Σ |x[y,x+1]−x[y,x]|·wx[y,x] + |x[y+1,x]−x[y,x]|·wy[y,x]`,
    /// where differences past the last column/row are zero.
    pub fn edge_smooth(&mut self, x: Var, height: usize, width: usize, weight_x: Vec<f64>, weight_y: Vec<f64>) -> Result<Var> {
        let n = height * width;
        let xv = self.value(x).data();
        if xv.len() != n || weight_x.len() != n || weight_y.len() != n {
            return Err(Error::config(format!(
                "edge_smooth: expected {n} values (map {}, weights {}/{})",
                xv.len(),
                weight_x.len(),
                weight_y.len()
            )));
        }
        let mut s = 0.0;
        for y in 0..height {
            for c in 0..width {
                let i = y * width + c;
                if c + 1 < width {
                    s += (xv[i + 1] - xv[i]).abs() * weight_x[i];
                }
                if y + 1 < height {
                    s += (xv[i + width] - xv[i]).abs() * weight_y[i];
                }
            }
        }
        let value = Tensor::scalar(s / n as f64);
        let needs = self.needs(x);
        Ok(self.push(
            value,
            Op::EdgeSmooth {
                x,
                width,
                weight_x,
                weight_y,
            },
            needs,
        ))
    }

    /// Reverse sweep from the scalar `loss`. Gradients at fan-in nodes are summed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Usage("backward on a non-finite loss".into()));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let n = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    filters,
                    bias,
                    stride,
                    cols,
                } => {
                    let (c, h, w) = nodes[input.0].value.dims3()?;
                    let fshape = nodes[filters.0].value.shape();
                    let (o, k) = (fshape[0], fshape[2]);
                    let (ho, wo) = (conv_out(h, *stride), conv_out(w, *stride));
                    let plane = ho * wo;
                    let ckk = c * k * k;
                    if let Some(db) = acc(&mut grads, &nodes, *bias) {
                        for (oc, d) in db.iter_mut().enumerate() {
                            *d += g[oc * plane..(oc + 1) * plane].iter().sum::<f64>();
                        }
                    }
                    if let Some(dw) = acc(&mut grads, &nodes, *filters) {
                        gemm(o, plane, ckk, &g, false, cols, true, 1.0, dw);
                    }
                    if nodes[input.0].needs_grad {
                        let mut dcols = vec![0.0; ckk * plane];
                        gemm(ckk, o, plane, nodes[filters.0].value.data(), true, &g, false, 0.0, &mut dcols);
                        let dx = acc(&mut grads, &nodes, *input).expect("needs grad");
                        col2im(&dcols, dx, c, h, w, k, *stride, ho, wo);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = nodes[x.0].value.data();
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += if *xi > 0.0 { *gi } else { slope * gi };
                        }
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let (_, h, w) = nodes[x.0].value.dims3()?;
                    let plane = h * w;
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        for (ch, gi) in dx.chunks_mut(plane).zip(&g) {
                            let v = gi / plane as f64;
                            ch.iter_mut().for_each(|d| *d += v);
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let n = nodes[x.0].value.len();
                    let m = g.len();
                    if let Some(db) = acc(&mut grads, &nodes, *b) {
                        db.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
                    }
                    if let Some(dw) = acc(&mut grads, &nodes, *w) {
                        let xv = nodes[x.0].value.data();
                        for (row, gi) in dw.chunks_mut(n).zip(&g) {
                            row.iter_mut().zip(xv).for_each(|(d, xj)| *d += gi * xj);
                        }
                    }
                    if nodes[x.0].needs_grad {
                        let wv = nodes[w.0].value.data();
                        let dx = acc(&mut grads, &nodes, *x).expect("needs grad");
                        gemm(n, m, 1, wv, true, &g, false, 1.0, dx);
                    }
                }
                Op::Add { a, b } => {
                    for v in [a, b] {
                        if let Some(d) = acc(&mut grads, &nodes, *v) {
                            d.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    for (v, other) in [(a, b), (b, a)] {
                        let ov = nodes[other.0].value.data();
                        if let Some(d) = acc(&mut grads, &nodes, *v) {
                            for ((d, gi), o) in d.iter_mut().zip(&g).zip(ov) {
                                *d += gi * o;
                            }
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        dx.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi * factor);
                    }
                }
                Op::Sum { x } => {
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Slice { x, offset } => {
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        dx[*offset..*offset + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(d, gi)| *d += gi);
                    }
                }
                Op::Concat { parts } => {
                    let mut start = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        if let Some(dp) = acc(&mut grads, &nodes, *p) {
                            dp.iter_mut().zip(&g[start..start + n]).for_each(|(d, gi)| *d += gi);
                        }
                        start += n;
                    }
                }
                Op::Upsample2x { x } => {
                    let (c, h, w) = nodes[x.0].value.dims3()?;
                    let out_shape = node.value.shape();
                    let (height, width) = (out_shape[1], out_shape[2]);
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        for ci in 0..c {
                            for y in 0..height {
                                for xx in 0..width {
                                    dx[(ci * h + y / 2) * w + xx / 2] += g[(ci * height + y) * width + xx];
                                }
                            }
                        }
                    }
                }
                Op::L1At { x, indices, targets } => {
                    let xv = nodes[x.0].value.data();
                    let scale = g[0] / indices.len() as f64;
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        for (&i, t) in indices.iter().zip(targets) {
                            dx[i] += scale * sign(xv[i] - t);
                        }
                    }
                }
                Op::L1To { x, target } => {
                    let xv = nodes[x.0].value.data();
                    let scale = g[0] / xv.len() as f64;
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        for ((d, xi), t) in dx.iter_mut().zip(xv).zip(target) {
                            *d += scale * sign(xi - t);
                        }
                    }
                }
                Op::EdgeSmooth {
                    x,
                    width,
                    weight_x,
                    weight_y,
                } => {
                    let xv = nodes[x.0].value.data();
                    let n = xv.len();
                    let width = *width;
                    let height = n / width;
                    let scale = g[0] / n as f64;
                    if let Some(dx) = acc(&mut grads, &nodes, *x) {
                        for y in 0..height {
                            for c in 0..width {
                                let i = y * width + c;
                                if c + 1 < width {
                                    let s = scale * weight_x[i] * sign(xv[i + 1] - xv[i]);
                                    dx[i + 1] += s;
                                    dx[i] -= s;
                                }
                                if y + 1 < height {
                                    let s = scale * weight_y[i] * sign(xv[i + width] - xv[i]);
                                    dx[i + width] += s;
                                    dx[i] -= s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
