use std::fmt;

/// Dense row-major `f64` array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Panics if `data.len()` does not match the product of `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            numel(shape),
            self.data.len(),
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            self.shape, other.shape,
            "elementwise op on mismatched shapes"
        );
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.data.len() / self.shape[0];
        &self.data[i * width..(i + 1) * width]
    }

    /// Stacks equal-length rows into a `[rows.len(), width]` tensor.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            assert_eq!(r.as_ref().len(), width, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Tensor::new(&[rows.len(), width], data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Strides of `src` laid over `dst`, zero along broadcast axes.
fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    assert_eq!(
        src.len(),
        dst.len(),
        "broadcast requires equal rank ({:?} vs {:?})",
        src,
        dst
    );
    let base = strides(src);
    src.iter()
        .zip(dst)
        .zip(base)
        .map(|((&s, &d), st)| {
            assert!(
                s == d || s == 1,
                "shape {:?} is not broadcastable to {:?}",
                src,
                dst
            );
            if s == d {
                st
            } else {
                0
            }
        })
        .collect()
}

/// Axis groups of a broadcast after merging neighbours that behave alike:
/// `(len, src_stride)`, with stride 0 along broadcast groups.
fn broadcast_groups(src: &[usize], dst: &[usize]) -> Vec<(usize, usize)> {
    let bs = broadcast_strides(src, dst);
    let mut groups: Vec<(usize, usize, bool)> = Vec::new();
    for (ax, &len) in dst.iter().enumerate() {
        if len == 1 {
            continue;
        }
        let bcast = bs[ax] == 0;
        match groups.last_mut() {
            // merge contiguous runs: both broadcast, or strides line up
            Some((l, st, b)) if *b == bcast && (bcast || *st == bs[ax] * len) => {
                *l *= len;
                *st = if bcast { 0 } else { bs[ax] };
            }
            _ => groups.push((len, bs[ax], bcast)),
        }
    }
    groups.into_iter().map(|(l, st, _)| (l, st)).collect()
}

fn broadcast_rec(groups: &[(usize, usize)], src: &[f64], off: usize, out: &mut Vec<f64>) {
    match groups {
        [] => out.push(src[off]),
        [(len, 0)] => out.extend(std::iter::repeat(src[off]).take(*len)),
        [(len, _)] => out.extend_from_slice(&src[off..off + len]),
        [(len, st), rest @ ..] => {
            for i in 0..*len {
                broadcast_rec(rest, src, off + i * st, out);
            }
        }
    }
}

fn sum_rec(groups: &[(usize, usize)], src: &[f64], pos: &mut usize, off: usize, out: &mut [f64]) {
    match groups {
        [] => {
            out[off] += src[*pos];
            *pos += 1;
        }
        [(len, 0)] => {
            out[off] += src[*pos..*pos + len].iter().sum::<f64>();
            *pos += len;
        }
        [(len, _)] => {
            for (o, s) in out[off..off + len].iter_mut().zip(&src[*pos..*pos + len]) {
                *o += s;
            }
            *pos += len;
        }
        [(len, st), rest @ ..] => {
            for i in 0..*len {
                sum_rec(rest, src, pos, off + i * st, out);
            }
        }
    }
}

pub(crate) fn broadcast_to(src: &Tensor, shape: &[usize]) -> Tensor {
    let groups = broadcast_groups(&src.shape, shape);
    let mut out = Vec::with_capacity(numel(shape));
    if numel(shape) > 0 {
        broadcast_rec(&groups, &src.data, 0, &mut out);
    }
    Tensor::new(shape, out)
}

pub(crate) fn sum_to(src: &Tensor, shape: &[usize]) -> Tensor {
    let groups = broadcast_groups(shape, &src.shape);
    let mut out = vec![0.0; numel(shape)];
    if src.numel() > 0 {
        sum_rec(&groups, &src.data, &mut 0, 0, &mut out);
    }
    Tensor::new(shape, out)
}

pub(crate) fn transpose2(src: &Tensor) -> Tensor {
    assert_eq!(src.ndim(), 2, "transpose expects a matrix, got {:?}", src.shape);
    let (r, c) = (src.shape[0], src.shape[1]);
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        out.extend((0..r).map(|i| src.data[i * c + j]));
    }
    Tensor::new(&[c, r], out)
}
