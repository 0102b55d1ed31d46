//! Synthetic data with known answers: planted DMD sequences and rendered
//! scenes with exact foreground truth.

use faer::{c64, Mat};
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CdmdError, Result};
use crate::frames_io::FrameSequence;
use crate::pipeline::ForegroundMask;
use crate::rng::{domain, stream};

/// A sequence built to satisfy `X = Φ diag(b) 𝒱` exactly.
#[derive(Clone, Debug)]
pub struct PlantedDmd {
    /// `n` pixels in a single row (`width = n`, `height = 1`).
    pub frames: FrameSequence,
    pub modes: Mat<c64>,
    pub amplitudes: Vec<c64>,
    pub lambdas: Vec<c64>,
}

/// Planted sequence with orthonormal modes. Real eigenvalues get real modes;
/// each conjugate pair gets modes `(q_a ± i q_b)/√2` and conjugate
/// amplitudes, so the data are real. Values are not restricted to `[0, 255]`.
pub fn make_planted_dmd(n: usize, m: usize, lambdas: &[c64], seed: u64) -> Result<PlantedDmd> {
    let r = lambdas.len();
    if r == 0 || r > n.min(m) {
        return Err(CdmdError::InvalidArgument(format!("need 1..={} eigenvalues, got {r}", n.min(m))));
    }
    if m < 2 {
        return Err(CdmdError::InvalidArgument("need at least 2 frames".into()));
    }
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(CdmdError::NonFinite("planted eigenvalues"));
    }
    let partner = conjugate_partners(lambdas)?;

    let mut rng = stream(seed, domain::PLANTED, 0);
    let g = Mat::<f64>::from_fn(n, r, |_, _| rng.sample(StandardNormal));
    let q = g.qr().compute_thin_Q();

    let mut modes = Mat::<c64>::zeros(n, r);
    let mut amplitudes = vec![c64::new(0.0, 0.0); r];
    let sqrt_half = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..r {
        match partner[j] {
            None => {
                for i in 0..n {
                    modes[(i, j)] = c64::new(q[(i, j)], 0.0);
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                amplitudes[j] = c64::new(sign * rng.random_range(1.0..2.0), 0.0);
            }
            Some(p) if p > j => {
                for i in 0..n {
                    let z = c64::new(q[(i, j)], q[(i, p)]) * sqrt_half;
                    modes[(i, j)] = z;
                    modes[(i, p)] = z.conj();
                }
                let b = c64::from_polar(rng.random_range(1.0..2.0), rng.random_range(0.0..std::f64::consts::TAU));
                amplitudes[j] = b;
                amplitudes[p] = b.conj();
            }
            Some(_) => {}
        }
    }

    let mut x = Mat::<f64>::zeros(n, m);
    let mut power: Vec<c64> = amplitudes.clone();
    for t in 0..m {
        let col = x.col_as_slice_mut(t);
        for j in 0..r {
            match partner[j] {
                Some(p) if p < j => continue,
                _ => {}
            }
            let factor = if partner[j].is_some() { 2.0 } else { 1.0 };
            for (i, v) in col.iter_mut().enumerate() {
                *v += factor * (modes[(i, j)] * power[j]).re;
            }
        }
        for j in 0..r {
            power[j] *= lambdas[j];
        }
    }
    let frames = FrameSequence::new_unbounded(x, n, 1, 1.0)?;
    Ok(PlantedDmd { frames, modes, amplitudes, lambdas: lambdas.to_vec() })
}

/// Partner index of each non-real eigenvalue; errors unless the list is
/// closed under conjugation.
fn conjugate_partners(lambdas: &[c64]) -> Result<Vec<Option<usize>>> {
    let r = lambdas.len();
    let mut partner = vec![None; r];
    for j in 0..r {
        if lambdas[j].im == 0.0 || partner[j].is_some() {
            continue;
        }
        let target = lambdas[j].conj();
        let found = (0..r).find(|&q| q != j && partner[q].is_none() && lambdas[q] == target);
        match found {
            Some(q) => {
                partner[j] = Some(q);
                partner[q] = Some(j);
            }
            None => {
                return Err(CdmdError::InvalidArgument(format!(
                    "eigenvalue {} has no conjugate partner in the list",
                    lambdas[j]
                )))
            }
        }
    }
    Ok(partner)
}

/// A rectangle of constant intensity moving with constant velocity while
/// `start_frame <= t < end_frame`. Its top-left corner at frame `t` is
/// `(x0 + vx (t − start), y0 + vy (t − start))`, rounded down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingObject {
    pub width: usize,
    pub height: usize,
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    pub intensity: f64,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl MovingObject {
    /// Top-left corner at frame `t`, if present.
    pub fn position(&self, t: usize) -> Option<(i64, i64)> {
        if t < self.start_frame || t >= self.end_frame {
            return None;
        }
        let dt = (t - self.start_frame) as f64;
        Some(((self.x0 + self.vx * dt).floor() as i64, (self.y0 + self.vy * dt).floor() as i64))
    }
}

/// Background element oscillating in time with a checkerboard texture:
/// pixel value offset `amplitude · sin(2π t / period) · (±1)`. Part of the
/// background, never foreground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatingPatch {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub objects: Vec<MovingObject>,
    #[serde(default)]
    pub patches: Vec<OscillatingPatch>,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub frames: FrameSequence,
    pub truth: ForegroundMask,
    /// Static textured background (without patches, objects or noise).
    pub background: Vec<f64>,
    pub spec: SceneSpec,
}

/// Lowest and highest value of the rendered static background.
pub const BACKGROUND_RANGE: (f64, f64) = (60.0, 190.0);

/// Textured background plus moving rectangles and i.i.d. Gaussian noise,
/// clamped to `[0, 255]`.
pub fn make_scene(
    width: usize,
    height: usize,
    n_frames: usize,
    objects: &[MovingObject],
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    render_scene(&SceneSpec {
        width,
        height,
        n_frames,
        objects: objects.to_vec(),
        patches: Vec::new(),
        noise_sigma,
        seed,
    })
}

pub fn render_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let (w, h, m) = (spec.width, spec.height, spec.n_frames);
    if w == 0 || h == 0 || m < 2 {
        return Err(CdmdError::InvalidArgument(format!("scene needs a nonempty frame and 2+ frames, got {w}x{h}x{m}")));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(CdmdError::InvalidArgument(format!("noise sigma must be nonnegative, got {}", spec.noise_sigma)));
    }
    for (i, o) in spec.objects.iter().enumerate() {
        if o.width == 0 || o.height == 0 || o.end_frame > m || o.start_frame >= o.end_frame {
            return Err(CdmdError::InvalidArgument(format!("object {i} has an empty shape or frame range")));
        }
        for t in o.start_frame..o.end_frame {
            let (x, y) = o.position(t).expect("inside frame range");
            if x < 0 || y < 0 || x as usize + o.width > w || y as usize + o.height > h {
                return Err(CdmdError::InvalidArgument(format!("object {i} leaves the frame at t={t}")));
            }
        }
    }
    for (i, p) in spec.patches.iter().enumerate() {
        if p.x + p.width > w || p.y + p.height > h || !(p.period > 0.0) {
            return Err(CdmdError::InvalidArgument(format!("patch {i} is out of bounds or has no period")));
        }
    }

    let background = smooth_field(w, h, spec.seed);
    let n = w * h;
    let mut pixels = Mat::<f64>::zeros(n, m);
    let mut truth = ForegroundMask::zeros(n, m);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    for t in 0..m {
        let col = pixels.col_as_slice_mut(t);
        col.copy_from_slice(&background);
        for p in &spec.patches {
            let s = p.amplitude * (std::f64::consts::TAU * t as f64 / p.period).sin();
            for r in p.y..p.y + p.height {
                for c in p.x..p.x + p.width {
                    let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                    col[r * w + c] += sign * s;
                }
            }
        }
        for o in &spec.objects {
            if let Some((x, y)) = o.position(t) {
                let (x, y) = (x as usize, y as usize);
                for r in y..y + o.height {
                    for c in x..x + o.width {
                        col[r * w + c] = o.intensity;
                        truth.set(r * w + c, t, true);
                    }
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            let mut rng = stream(spec.seed, domain::NOISE, t as u64);
            for v in col.iter_mut() {
                *v += rng.sample(noise);
            }
        }
        for v in col.iter_mut() {
            *v = v.clamp(0.0, 255.0);
        }
    }
    let frames = FrameSequence::new(pixels, w, h, 1.0)?;
    Ok(SyntheticScene { frames, truth, background, spec: spec.clone() })
}

/// Sum of a few random low-frequency plane waves, rescaled to
/// [`BACKGROUND_RANGE`].
fn smooth_field(w: usize, h: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, domain::SCENE, 0);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let fx = rng.random_range(0.5..3.0) / w as f64;
            let fy = rng.random_range(0.5..3.0) / h as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let weight = rng.random_range(0.5..1.0);
            (fx, fy, phase, weight)
        })
        .collect();
    let mut field: Vec<f64> = (0..w * h)
        .map(|idx| {
            let (r, c) = ((idx / w) as f64, (idx % w) as f64);
            waves
                .iter()
                .map(|&(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * c + fy * r) + ph).sin())
                .sum()
        })
        .collect();
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = BACKGROUND_RANGE;
    for v in &mut field {
        *v = if hi > lo { a + (b - a) * (*v - lo) / (hi - lo) } else { 0.5 * (a + b) };
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::singular_values;

    fn block(start: usize, end: usize) -> MovingObject {
        MovingObject {
            width: 8,
            height: 8,
            x0: 0.0,
            y0: 28.0,
            vx: 56.0 / (end - start - 1) as f64,
            vy: 0.0,
            intensity: 250.0,
            start_frame: start,
            end_frame: end,
        }
    }

    #[test]
    fn constant_planted_video() {
        let p = make_planted_dmd(20, 5, &[c64::new(1.0, 0.0)], 1).unwrap();
        for t in 1..5 {
            assert_eq!(p.frames.frame(t), p.frames.frame(0));
        }
    }

    #[test]
    fn planted_rank_and_orthonormal_modes() {
        let lambdas = [c64::new(1.0, 0.0), c64::from_polar(0.98, 0.3), c64::from_polar(0.98, -0.3)];
        let p = make_planted_dmd(100, 30, &lambdas, 2).unwrap();
        let s = singular_values(p.frames.pixels()).unwrap();
        assert!(s[2] > 1e-6 * s[0]);
        assert!(s[3] <= 1e-10 * s[0]);
        let gram = p.modes.adjoint() * &p.modes;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                // the paired modes are orthonormal but conjugates of each other
                if (i, j) == (1, 2) || (i, j) == (2, 1) {
                    continue;
                }
                assert!((gram[(i, j)] - c64::new(e, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn planted_rejects_open_pairs() {
        assert!(make_planted_dmd(10, 5, &[c64::new(0.5, 0.5)], 0).is_err());
        assert!(make_planted_dmd(3, 10, &[c64::new(1.0, 0.0); 4], 0).is_err());
    }

    #[test]
    fn empty_scene() {
        let s = make_scene(32, 24, 10, &[], 0.0, 3).unwrap();
        assert_eq!(s.truth.count(), 0);
        let (lo, hi) = BACKGROUND_RANGE;
        assert!(s.background.iter().all(|&v| (lo..=hi).contains(&v)));
        let min = s.background.iter().copied().fold(f64::INFINITY, f64::min);
        let max = s.background.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max - min >= 50.0);
        for t in 0..10 {
            assert_eq!(s.frames.frame(t), &s.background[..]);
        }
    }

    #[test]
    fn block_truth_counts() {
        let s = make_scene(64, 64, 200, &[block(50, 150)], 2.0, 4).unwrap();
        for t in 0..200 {
            let count: usize = s.truth.frame(t).iter().map(|&b| b as usize).sum();
            assert_eq!(count, if (50..150).contains(&t) { 64 } else { 0 }, "t={t}");
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let mut o = block(2, 10);
        o.y0 = 4.0;
        o.vx = 1.0;
        let a = make_scene(16, 16, 20, &[o], 3.0, 9).unwrap();
        let b = make_scene(16, 16, 20, &[o], 3.0, 9).unwrap();
        assert_eq!(a.frames.pixels(), b.frames.pixels());
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn out_of_bounds_object() {
        let mut o = block(0, 10);
        o.vx = 10.0;
        assert!(make_scene(64, 64, 10, &[o], 0.0, 0).is_err());
    }

    #[test]
    fn patch_is_not_foreground() {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            n_frames: 8,
            objects: vec![],
            patches: vec![OscillatingPatch { x: 2, y: 2, width: 4, height: 4, amplitude: 20.0, period: 8.0 }],
            noise_sigma: 0.0,
            seed: 1,
        };
        let s = render_scene(&spec).unwrap();
        assert_eq!(s.truth.count(), 0);
        let d = s.frames.frame(2)[2 * 16 + 2] - s.background[2 * 16 + 2];
        assert!((d - 20.0).abs() < 1e-9);
    }
}
