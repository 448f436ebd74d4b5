//! Training objectives and discriminators.
//!
//! Every loss exists twice: a plain `f64` version used for reporting and as a
//! reference, and a tensor version that training backpropagates through.

mod msrd;
mod wave_disc;

pub use msrd::{Msrd, MsrdConfig};
pub use wave_disc::{MultiPeriodDisc, MultiResolutionStftDisc, WaveDiscConfig, WaveDiscriminators};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::nn::spectral::TensorMel;

/// Analysis windows of the multi-scale Mel loss; hops are a quarter window.
pub const MEL_WINDOWS: [usize; 7] = [32, 64, 128, 256, 512, 1024, 2048];
/// Mel channels paired with [`MEL_WINDOWS`].
pub const MEL_BINS: [usize; 7] = [5, 10, 20, 40, 80, 160, 320];

/// Scores and intermediate feature maps of a bank of sub-discriminators.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub scores: Vec<Tensor>,
    /// `features[k][l]` is layer `l` of sub-discriminator `k`.
    pub features: Vec<Vec<Tensor>>,
}

/// Relative weights of the generator loss terms; the adversarial term has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub feat: f64,
    pub rec: f64,
    pub mel: f64,
}

impl LossWeights {
    pub fn adapter() -> Self {
        Self { feat: 1.0, rec: 200.0, mel: 0.0 }
    }

    pub fn vocoder() -> Self {
        Self { feat: 1.0, rec: 0.0, mel: 30.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.feat, self.rec, self.mel].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv: f64,
    pub feat: f64,
    pub rec: f64,
    pub mel: f64,
}

pub fn composite_g_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    parts.adv + w.feat * parts.feat + w.rec * parts.rec + w.mel * parts.mel
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean of (s - 1)^2.
pub fn lsgan_g_loss(fake: &[f64]) -> f64 {
    mean(fake.iter().map(|s| (s - 1.0).powi(2)))
}

/// mean[(real - 1)^2] + mean[fake^2].
pub fn lsgan_d_loss(real: &[f64], fake: &[f64]) -> f64 {
    mean(real.iter().map(|s| (s - 1.0).powi(2))) + mean(fake.iter().map(|s| s * s))
}

fn check_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Shape("representations differ in shape".into()));
    }
    Ok(())
}

/// Elementwise mean squared error of two (T, D) matrices.
pub fn recon_loss(r: &[Vec<f64>], r_hat: &[Vec<f64>]) -> Result<f64> {
    check_matrix(r, r_hat)?;
    Ok(mean(r.iter().zip(r_hat).flat_map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)))))
}

/// Feature-matching L1: the mean absolute difference of each map, summed over all
/// maps and divided by the number of maps.
pub fn feature_match_loss(real: &[Vec<Vec<f64>>], fake: &[Vec<Vec<f64>>]) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!("{} vs {} sub-discriminators", real.len(), fake.len())));
    }
    let mut total = 0.0;
    let mut maps = 0usize;
    for (k, (rk, fk)) in real.iter().zip(fake).enumerate() {
        if rk.len() != fk.len() {
            return Err(Error::Shape(format!("sub-discriminator {k}: {} vs {} layers", rk.len(), fk.len())));
        }
        for (l, (r, f)) in rk.iter().zip(fk).enumerate() {
            if r.len() != f.len() {
                return Err(Error::Shape(format!("map [{k}][{l}]: {} vs {} values", r.len(), f.len())));
            }
            total += mean(r.iter().zip(f).map(|(a, b)| (a - b).abs()));
            maps += 1;
        }
    }
    Ok(if maps == 0 { 0.0 } else { total / maps as f64 })
}

/// The seven Mel analysis scales at `rate`.
pub fn mel_ladder(rate: u32) -> Vec<MelConfig> {
    MEL_WINDOWS.iter().zip(MEL_BINS).map(|(&w, m)| MelConfig::full_band(w, m, rate)).collect()
}

/// Sum over the Mel ladder of the mean absolute log-Mel difference.
pub fn multiscale_mel_loss(x: &Waveform, x_hat: &Waveform) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: x_hat.len() });
    }
    if x.rate() != x_hat.rate() {
        return Err(Error::RateMismatch { left: x.rate(), right: x_hat.rate() });
    }
    let mut total = 0.0;
    for cfg in mel_ladder(x.rate()) {
        let a = mel_spectrogram(x, &cfg)?;
        let b = mel_spectrogram(x_hat, &cfg)?;
        total += mean(a.iter().zip(&b).flat_map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v).abs())));
    }
    Ok(total)
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    Ok((a - b)?.abs()?.mean_all()?)
}

fn average(terms: Vec<Tensor>) -> Result<Tensor> {
    let n = terms.len();
    if n == 0 {
        return Err(Error::Shape("no discriminator outputs".into()));
    }
    Ok((Tensor::stack(&terms, 0)?.sum_all()? / n as f64)?)
}

/// Generator LS-GAN loss averaged over sub-discriminators.
pub fn lsgan_g_tensor(fake: &[Tensor]) -> Result<Tensor> {
    average(fake.iter().map(|s| Ok((s - 1.0)?.sqr()?.mean_all()?)).collect::<Result<_>>()?)
}

/// Discriminator LS-GAN loss averaged over sub-discriminators.
pub fn lsgan_d_tensor(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!("{} real vs {} fake score sets", real.len(), fake.len())));
    }
    average(
        real.iter()
            .zip(fake)
            .map(|(r, f)| Ok(((r - 1.0)?.sqr()?.mean_all()? + f.sqr()?.mean_all()?)?))
            .collect::<Result<_>>()?,
    )
}

/// Tensor feature matching; the real-side maps are treated as constants.
pub fn feature_match_tensor(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::Shape(format!("{} vs {} sub-discriminators", real.len(), fake.len())));
    }
    let mut terms = Vec::new();
    for (rk, fk) in real.iter().zip(fake) {
        if rk.len() != fk.len() {
            return Err(Error::Shape(format!("{} vs {} layers", rk.len(), fk.len())));
        }
        for (r, f) in rk.iter().zip(fk) {
            terms.push(l1(&r.detach(), f)?);
        }
    }
    average(terms)
}

/// Differentiable multi-scale Mel loss over (batch, samples) tensors.
#[derive(Debug, Clone)]
pub struct MultiscaleMel {
    scales: Vec<TensorMel>,
}

impl MultiscaleMel {
    pub fn new(rate: u32, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self { scales: mel_ladder(rate).into_iter().map(|c| TensorMel::new(c, dtype, device)).collect::<Result<_>>()? })
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn forward(&self, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
        same_shape(x, x_hat)?;
        let mut total: Option<Tensor> = None;
        for s in &self.scales {
            let d = l1(&s.forward(x)?, &s.forward(x_hat)?)?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        total.ok_or_else(|| Error::Shape("empty Mel ladder".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_check, Init, ParamStore};
    use rand::Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut r = crate::rng::stream(seed, "obj");
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(lsgan_g_loss(&[1.0, 1.0]), 0.0);
        assert_eq!(lsgan_g_loss(&[0.0, 0.0]), 1.0);
        assert!((lsgan_g_loss(&[0.5, 1.5]) - 0.25).abs() < 1e-15);
        assert_eq!(lsgan_d_loss(&[1.0], &[0.0]), 0.0);
        assert!((lsgan_d_loss(&[0.5], &[0.5]) - 0.5).abs() < 1e-15);
        assert_eq!(lsgan_d_loss(&[0.0], &[1.0]), 2.0);
    }

    #[test]
    fn recon_and_feature_match_closed_forms() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v + 0.5).collect()).collect();
        assert_eq!(recon_loss(&a, &a).unwrap(), 0.0);
        assert!((recon_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(recon_loss(&a, &a[..1]).is_err());
        let real = vec![vec![vec![1.0, 2.0, 3.0]]];
        let fake = vec![vec![vec![1.5, 2.5, 3.5]]];
        assert!((feature_match_loss(&real, &fake).unwrap() - 0.5).abs() < 1e-15);
        let ragged = vec![vec![vec![1.0, 2.0]]];
        assert!(feature_match_loss(&real, &ragged).is_err());
    }

    #[test]
    fn composite_weights() {
        let unit = LossParts { adv: 1.0, feat: 1.0, rec: 1.0, mel: 1.0 };
        assert_eq!(composite_g_loss(&unit, &LossWeights::adapter()), 202.0);
        assert_eq!(composite_g_loss(&unit, &LossWeights::vocoder()), 32.0);
        let rec_only = LossParts { rec: 1.0, ..Default::default() };
        assert_eq!(composite_g_loss(&rec_only, &LossWeights::adapter()), 200.0);
        assert_eq!(composite_g_loss(&LossParts::default(), &LossWeights::vocoder()), 0.0);
    }

    #[test]
    fn tensor_losses_match_reference() {
        let dev = Device::Cpu;
        let a = rand_vec(12, 1);
        let b = rand_vec(12, 2);
        let ta = Tensor::from_vec(a.clone(), (3, 4), &dev).unwrap();
        let tb = Tensor::from_vec(b.clone(), (3, 4), &dev).unwrap();
        let am: Vec<Vec<f64>> = a.chunks(4).map(|c| c.to_vec()).collect();
        let bm: Vec<Vec<f64>> = b.chunks(4).map(|c| c.to_vec()).collect();
        let got = mse(&ta, &tb).unwrap().to_scalar::<f64>().unwrap();
        assert!((got - recon_loss(&am, &bm).unwrap()).abs() < 1e-12);
        let g = lsgan_g_tensor(&[ta.clone()]).unwrap().to_scalar::<f64>().unwrap();
        assert!((g - lsgan_g_loss(&a)).abs() < 1e-12);
        let d = lsgan_d_tensor(&[ta.clone()], &[tb.clone()]).unwrap().to_scalar::<f64>().unwrap();
        assert!((d - lsgan_d_loss(&a, &b)).abs() < 1e-12);
        let fm = feature_match_tensor(&[vec![ta]], &[vec![tb]]).unwrap().to_scalar::<f64>().unwrap();
        assert!((fm - feature_match_loss(&[vec![a]], &[vec![b]]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn multiscale_mel_identity_and_tensor_agreement() {
        let x = Waveform::new(rand_vec(4096, 3).iter().map(|v| v * 0.3).collect(), 16000).unwrap();
        let y = Waveform::new(rand_vec(4096, 4).iter().map(|v| v * 0.3).collect(), 16000).unwrap();
        assert_eq!(multiscale_mel_loss(&x, &x).unwrap(), 0.0);
        let reference = multiscale_mel_loss(&x, &y).unwrap();
        let msm = MultiscaleMel::new(16000, DType::F64, &Device::Cpu).unwrap();
        assert_eq!(msm.n_scales(), 7);
        let tx = Tensor::from_vec(x.samples().to_vec(), (1, 4096), &Device::Cpu).unwrap();
        let ty = Tensor::from_vec(y.samples().to_vec(), (1, 4096), &Device::Cpu).unwrap();
        let got = msm.forward(&tx, &ty).unwrap().to_scalar::<f64>().unwrap();
        assert!((got - reference).abs() < 1e-6, "{got} vs {reference}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let store = ParamStore::new(9, DType::F64);
        let s = store.root();
        let x = s.param("x", &[2, 6], Init::Normal(1.0)).unwrap();
        let fixed = Tensor::from_vec(rand_vec(12, 5), (2, 6), &Device::Cpu).unwrap();
        let check = |f: &dyn Fn() -> Result<Tensor>| {
            let r = finite_difference_check(&store, f, 12, 1e-6, 1e-8, 2).unwrap();
            assert!(r.max_rel_err < 1e-4, "{r:?}");
        };
        check(&|| mse(&x, &fixed));
        check(&|| lsgan_g_tensor(&[x.clone()]));
        check(&|| lsgan_d_tensor(&[fixed.clone()], &[x.clone()]));
        check(&|| feature_match_tensor(&[vec![fixed.clone()]], &[vec![x.clone()]]));
    }
}
