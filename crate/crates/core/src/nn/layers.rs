use candle_core::{Tensor, D};

use super::{gelu, sigmoid, softmax_last, Init, Scope};
use crate::error::{Error, Result};

/// Affine map over the last dimension. Weight layout is (out, in).
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &Scope, input: usize, output: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = s.param("weight", &[output, input], Init::Uniform(bound))?;
        let bias = if bias { Some(s.param("bias", &[output], Init::Uniform(bound))?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn dtype(&self) -> candle_core::DType {
        self.weight.dtype()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().ok_or_else(|| Error::Shape("linear input is a scalar".into()))?;
        let rows = x.elem_count() / input.max(1);
        let y = x.reshape((rows, input))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().expect("non-empty dims") = self.out_dim();
        Ok(y.reshape(out)?)
    }
}

/// Unpadded convolution run one batch item at a time: candle's kernel gradient is
/// wrong for batched conv1d.
fn conv1d_per_item(x: &Tensor, kernel: &Tensor, stride: usize, dilation: usize) -> Result<Tensor> {
    let b = x.dim(0)?;
    if b == 1 {
        return Ok(x.conv1d(kernel, 0, stride, dilation, 1)?);
    }
    let items = (0..b).map(|i| x.narrow(0, i, 1)?.conv1d(kernel, 0, stride, dilation, 1)).collect::<candle_core::Result<Vec<_>>>()?;
    Ok(Tensor::cat(&items, 0)?)
}

/// 1-D convolution over (batch, channels, time).
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    stride: usize,
    dilation: usize,
}

impl Conv1d {
    pub fn new(
        s: &Scope,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        Ok(Self {
            weight: s.param("weight", &[output, input, kernel], Init::Uniform(bound))?,
            bias: s.param("bias", &[output], Init::Uniform(bound))?,
            padding,
            stride,
            dilation,
        })
    }

    /// Stride-1 convolution that keeps the sequence length (odd kernel).
    pub fn same(s: &Scope, input: usize, output: usize, kernel: usize) -> Result<Self> {
        Self::new(s, input, output, kernel, 1, kernel / 2, 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // Padding is applied explicitly: candle's conv backward underflows when the
        // padding exceeds the sequence length.
        let x = if self.padding > 0 { x.pad_with_zeros(2, self.padding, self.padding)? } else { x.clone() };
        let y = conv1d_per_item(&x, &self.weight, self.stride, self.dilation)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

/// Per-channel convolution with "same" padding, written as a sum of shifted slices.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
}

impl DepthwiseConv1d {
    pub fn new(s: &Scope, channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Shape(format!("depthwise kernel must be odd, got {kernel}")));
        }
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            weight: s.param("weight", &[channels, kernel], Init::Uniform(bound))?,
            bias: s.param("bias", &[channels], Init::Uniform(bound))?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(2)?;
        let pad = self.kernel / 2;
        let xp = x.pad_with_zeros(2, pad, pad)?;
        let mut acc = self.bias.reshape((1, (), 1))?.broadcast_as(x.shape())?.contiguous()?;
        for j in 0..self.kernel {
            let w = self.weight.narrow(1, j, 1)?.reshape((1, (), 1))?;
            acc = (acc + xp.narrow(2, j, t)?.broadcast_mul(&w)?)?;
        }
        Ok(acc)
    }
}

fn normalize_last(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(xc.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(s: &Scope, dim: usize) -> Result<Self> {
        Ok(Self { gamma: s.param("gamma", &[dim], Init::Ones)?, beta: s.param("beta", &[dim], Init::Zeros)?, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(normalize_last(x, self.eps)?.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Group normalization over (batch, channels, time).
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(s: &Scope, groups: usize, channels: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Shape(format!("{channels} channels cannot form {groups} groups")));
        }
        Ok(Self {
            gamma: s.param("gamma", &[channels], Init::Ones)?,
            beta: s.param("beta", &[channels], Init::Zeros)?,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let y = normalize_last(&x.reshape((b, self.groups, (c / self.groups) * t))?, self.eps)?.reshape((b, c, t))?;
        Ok(y.broadcast_mul(&self.gamma.reshape((1, c, 1))?)?.broadcast_add(&self.beta.reshape((1, c, 1))?)?)
    }
}

/// Single-layer LSTM over (batch, time, features), returning all hidden states.
#[derive(Debug, Clone)]
pub struct Lstm {
    input_proj: Linear,
    w_hh: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(s: &Scope, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            input_proj: Linear::new(&s.pp("ih"), input, 4 * hidden, true)?,
            w_hh: s.param("w_hh", &[4 * hidden, hidden], Init::Uniform(bound))?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, t, _) = x.dims3()?;
        let h_dim = self.hidden;
        let xp = self.input_proj.forward(x)?;
        let mut h = Tensor::zeros((n, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let w_hh_t = self.w_hh.t()?;
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let gates = (xp.narrow(1, step, 1)?.squeeze(1)? + h.matmul(&w_hh_t)?)?;
            let i = sigmoid(&gates.narrow(1, 0, h_dim)?)?;
            let f = sigmoid(&gates.narrow(1, h_dim, h_dim)?)?;
            let g = gates.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * h_dim, h_dim)?)?;
            c = ((f * &c)? + (i * g)?)?;
            h = (o * c.tanh()?)?;
            outputs.push(h.unsqueeze(1)?);
        }
        Ok(Tensor::cat(&outputs, 1)?)
    }
}

/// Multi-head self-attention over (batch, time, dim).
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(s: &Scope, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Shape(format!("dimension {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(&s.pp("q"), dim, dim, true)?,
            k: Linear::new(&s.pp("k"), dim, dim, true)?,
            v: Linear::new(&s.pp("v"), dim, dim, true)?,
            out: Linear::new(&s.pp("out"), dim, dim, true)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let attn = softmax_last(&scores)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        self.out.forward(&y)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(s: &Scope, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self { up: Linear::new(&s.pp("up"), dim, hidden, true)?, down: Linear::new(&s.pp("down"), hidden, dim, true)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&gelu(&self.up.forward(x)?)?)
    }
}

/// Pre-norm Transformer encoder layer.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
}

impl TransformerLayer {
    pub fn new(s: &Scope, dim: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(&s.pp("norm1"), dim)?,
            attn: MultiHeadAttention::new(&s.pp("attn"), dim, heads)?,
            norm2: LayerNorm::new(&s.pp("norm2"), dim)?,
            ff: FeedForward::new(&s.pp("ff"), dim, ffn)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?)?)?;
        Ok((&x + self.ff.forward(&self.norm2.forward(&x)?)?)?)
    }
}
