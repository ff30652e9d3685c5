//! Image-quality and identity metrics: PSNR and SSIM on the 8-bit RGB scale,
//! verification accuracy with a midpoint threshold sweep, and an evaluation
//! harness that scores any upscaler against the dataset's references.

use ndarray::Array3;
use serde::Serialize;

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::generator::Generator;

/// Conventions stamped into every report so numbers stay comparable across
/// runs and tools.
pub const CONVENTIONS: &str = "8-bit RGB scale; psnr_db = 10*log10(255^2 / mse); \
ssim: K1=0.01 K2=0.03 L=255 over valid window positions, channels averaged; \
verification: cosine scores, accuracy-maximizing midpoint threshold, lowest threshold on ties";

const SSIM_C1: f64 = 6.5025; // (0.01 * 255)^2
const SSIM_C2: f64 = 58.5225; // (0.03 * 255)^2

fn to_255(v: f64) -> f64 {
    (v + 1.0) * 127.5
}

/// Peak signal-to-noise ratio in dB between two [-1, 1] images, computed on
/// the 8-bit scale. Identical images yield `f64::INFINITY`.
pub fn psnr(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Metric(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mse = (a - b)
        .mapv(|d| (d * 127.5) * (d * 127.5))
        .mean()
        .expect("non-empty image");
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Averaging window for SSIM local statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimWindow {
    /// 11x11 Gaussian, sigma 1.5.
    Gaussian11,
    /// 8x8 uniform.
    Uniform8,
}

impl SsimWindow {
    pub fn side(self) -> usize {
        match self {
            SsimWindow::Gaussian11 => 11,
            SsimWindow::Uniform8 => 8,
        }
    }

    /// Normalized weights, row-major `side * side`.
    pub fn weights(self) -> Vec<f64> {
        match self {
            SsimWindow::Gaussian11 => {
                let sigma = 1.5;
                let mut w = Vec::with_capacity(121);
                for y in 0..11 {
                    for x in 0..11 {
                        let dy = y as f64 - 5.0;
                        let dx = x as f64 - 5.0;
                        w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
                    }
                }
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                w
            }
            SsimWindow::Uniform8 => vec![1.0 / 64.0; 64],
        }
    }
}

/// Mean structural similarity between two [-1, 1] images on the 8-bit scale:
/// local weighted statistics at every valid window position, averaged over
/// positions and channels.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>, window: SsimWindow) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Metric(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (c, h, w) = a.dim();
    let side = window.side();
    if h < side || w < side {
        return Err(Error::Metric(format!(
            "ssim needs at least {side}x{side} pixels, got {h}x{w}"
        )));
    }
    let weights = window.weights();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for oy in 0..=h - side {
            for ox in 0..=w - side {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for wy in 0..side {
                    for wx in 0..side {
                        let g = weights[wy * side + wx];
                        let xv = to_255(a[[ch, oy + wy, ox + wx]]);
                        let yv = to_255(b[[ch, oy + wy, ox + wx]]);
                        mx += g * xv;
                        my += g * yv;
                        mxx += g * xv * xv;
                        myy += g * yv * yv;
                        mxy += g * xv * yv;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Best verification accuracy over a threshold sweep, plus the threshold that
/// attains it. Candidates are the midpoints between adjacent distinct scores
/// and one sentinel on each side; a pair is accepted as "same" when its score
/// is at least the threshold. Ties go to the lowest threshold.
pub fn verification_accuracy(scores: &[(f64, bool)]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::Metric("verification accuracy of zero pairs".into()));
    }
    if scores.iter().all(|&(_, same)| same) || scores.iter().all(|&(_, same)| !same) {
        return Err(Error::Metric(
            "verification needs both genuine and impostor pairs".into(),
        ));
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Metric("non-finite verification score".into()));
    }
    let mut uniq: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    uniq.sort_by(|x, y| x.partial_cmp(y).unwrap());
    uniq.dedup();
    let mut candidates = Vec::with_capacity(uniq.len() + 1);
    candidates.push(uniq[0] - 1.0);
    for pair in uniq.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(uniq[uniq.len() - 1] + 1.0);

    let mut best = (f64::NEG_INFINITY, 0.0);
    for &t in &candidates {
        let correct = scores
            .iter()
            .filter(|&&(s, same)| (s >= t) == same)
            .count();
        let acc = correct as f64 / scores.len() as f64;
        if acc > best.0 {
            best = (acc, t);
        }
    }
    Ok(best)
}

/// Anything that maps a low-resolution image to a high-resolution estimate.
pub trait Hallucinator {
    fn label(&self) -> &str;
    fn upscale(&self, lr: &Array3<f64>) -> Result<Array3<f64>>;
}

/// The non-learned reference every model must beat.
pub struct BilinearBaseline {
    pub factor: usize,
}

impl Hallucinator for BilinearBaseline {
    fn label(&self) -> &str {
        "bilinear"
    }

    fn upscale(&self, lr: &Array3<f64>) -> Result<Array3<f64>> {
        Ok(data::bilinear_upsample(lr, self.factor))
    }
}

impl Hallucinator for Generator {
    fn label(&self) -> &str {
        "generator"
    }

    fn upscale(&self, lr: &Array3<f64>) -> Result<Array3<f64>> {
        let batch = data::stack_batch(&[lr]);
        let sr = self.hallucinate(&batch)?;
        Ok(sr
            .index_axis(ndarray::Axis(0), 0)
            .to_owned()
            .into_dimensionality()
            .expect("upscaled image is (3, h, w)"))
    }
}

/// Quality of one reconstruction against its reference.
#[derive(Debug, Clone, Serialize)]
pub struct ImageScore {
    /// Dataset record index.
    pub index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Scores of one upscaler over a set of dataset records: per-image rows plus
/// their arithmetic means.
#[derive(Debug, Clone, Serialize)]
pub struct SrScore {
    pub label: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_images: usize,
    pub per_image: Vec<ImageScore>,
}

/// Score each upscaler against the high-resolution references of `indices`.
/// Reconstructions are snapped to the 8-bit lattice first, so the numbers
/// match what a viewer of the exported files would measure. Means are the
/// arithmetic means of the per-image values; one perfect reconstruction makes
/// the PSNR mean infinite, which serde renders as null.
pub fn evaluate_sr(
    ds: &Dataset,
    indices: &[usize],
    upscalers: &[&dyn Hallucinator],
    window: SsimWindow,
) -> Result<Vec<SrScore>> {
    if indices.is_empty() {
        return Err(Error::Metric("evaluation over zero images".into()));
    }
    let mut rows = Vec::with_capacity(upscalers.len());
    for &u in upscalers {
        let mut per_image = Vec::with_capacity(indices.len());
        for &i in indices {
            let sr = data::quantize_to_8bit(&u.upscale(&ds.lr[i])?);
            per_image.push(ImageScore {
                index: i,
                psnr_db: psnr(&sr, &ds.hr[i])?,
                ssim: ssim(&sr, &ds.hr[i], window)?,
            });
        }
        let n = per_image.len() as f64;
        rows.push(SrScore {
            label: u.label().to_string(),
            psnr_db: per_image.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: per_image.iter().map(|r| r.ssim).sum::<f64>() / n,
            n_images: indices.len(),
            per_image,
        });
    }
    Ok(rows)
}

/// Cosine scores for verification pairs: both sides of every pair go through
/// the upscaler (and 8-bit snap) before embedding, mirroring how a deployed
/// system would only ever see reconstructed faces.
pub fn verification_scores(
    rec: &crate::recognizer::Recognizer,
    upscaler: &dyn Hallucinator,
    ds: &Dataset,
    pairs: &[(usize, usize, bool)],
) -> Result<Vec<(f64, bool)>> {
    let mut unique: Vec<usize> = pairs.iter().flat_map(|&(a, b, _)| [a, b]).collect();
    unique.sort_unstable();
    unique.dedup();
    if unique.is_empty() {
        return Err(Error::Metric("verification over zero pairs".into()));
    }
    let mut srs = Vec::with_capacity(unique.len());
    for &i in &unique {
        srs.push(data::quantize_to_8bit(&upscaler.upscale(&ds.lr[i])?));
    }
    let batch = data::stack_batch(&srs.iter().collect::<Vec<_>>());
    let emb = rec
        .embed_values(&batch)?
        .into_dimensionality::<ndarray::Ix2>()
        .expect("embeddings are (n, d)");
    let row_of = |idx: usize| {
        let pos = unique.binary_search(&idx).expect("pair index was collected");
        emb.row(pos)
    };
    pairs
        .iter()
        .map(|&(a, b, same)| {
            let s = crate::recognizer::cosine_similarity(row_of(a), row_of(b))?;
            Ok((s, same))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationScore {
    pub accuracy: f64,
    pub threshold: f64,
    pub n_pairs: usize,
}

/// Full evaluation output with the measurement conventions stamped in.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub conventions: &'static str,
    pub ssim_window: SsimWindow,
    pub sr: Vec<SrScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationScore>,
}

impl MetricReport {
    pub fn new(window: SsimWindow, sr: Vec<SrScore>, verification: Option<VerificationScore>) -> Self {
        MetricReport {
            conventions: CONVENTIONS,
            ssim_window: window,
            sr,
            verification,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array;
    use rand_distr::{Distribution, Normal};

    fn randn3(seed: u64, shape: (usize, usize, usize), std: f64) -> Array3<f64> {
        let mut r = rng::stream(seed, "metrics-test", &[]);
        let normal = Normal::new(0.0, std).unwrap();
        Array::from_shape_simple_fn(shape, || normal.sample(&mut r))
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = randn3(1, (3, 12, 12), 0.3);
        assert_eq!(psnr(&a, &a.clone()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_of_uniform_sixteen_step_difference_matches_closed_form() {
        // A constant difference of 16 on the 8-bit scale gives
        // 10*log10(255^2/256) = 24.048.. dB.
        let a = Array3::from_elem((3, 16, 16), 0.0);
        let b = a.mapv(|v| v + 16.0 / 127.5);
        let got = psnr(&a, &b).unwrap();
        assert!(
            (got - 24.05).abs() <= 0.01,
            "FAIL: psnr for a 16-step difference is {got}, expected 24.05 +/- 0.01"
        );
        let sym = psnr(&b, &a).unwrap();
        assert!((got - sym).abs() < 1e-12, "FAIL: psnr not symmetric");
    }

    #[test]
    fn psnr_shape_mismatch_is_an_error() {
        let a = Array3::zeros((3, 8, 8));
        let b = Array3::zeros((3, 8, 9));
        assert!(psnr(&a, &b).is_err(), "FAIL: mismatched shapes accepted");
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = randn3(2, (3, 16, 16), 0.3);
        for w in [SsimWindow::Gaussian11, SsimWindow::Uniform8] {
            let s = ssim(&a, &a.clone(), w).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "FAIL: self-ssim is {s} under {w:?}");
        }
    }

    #[test]
    fn ssim_of_constant_brightness_shift_matches_closed_form() {
        // Constants 100 and 110 on the 8-bit scale: variance terms vanish and
        // ssim = (2*100*110 + C1) / (100^2 + 110^2 + C1) = 0.99548..
        let a = Array3::from_elem((3, 16, 16), 100.0 / 127.5 - 1.0);
        let b = Array3::from_elem((3, 16, 16), 110.0 / 127.5 - 1.0);
        for w in [SsimWindow::Gaussian11, SsimWindow::Uniform8] {
            let s = ssim(&a, &b, w).unwrap();
            assert!(
                (s - 0.9955).abs() <= 0.0005,
                "FAIL: constant-shift ssim is {s} under {w:?}, expected 0.9955 +/- 0.0005"
            );
        }
    }

    #[test]
    fn ssim_penalizes_larger_perturbations_more() {
        let a = randn3(3, (3, 16, 16), 0.25);
        let small = &a + &randn3(4, (3, 16, 16), 0.02);
        let large = &a + &randn3(4, (3, 16, 16), 0.15);
        let s_small = ssim(&a, &small, SsimWindow::Gaussian11).unwrap();
        let s_large = ssim(&a, &large, SsimWindow::Gaussian11).unwrap();
        assert!(
            s_small > s_large,
            "FAIL: ssim ranks noise wrong: small {s_small} vs large {s_large}"
        );
    }

    #[test]
    fn ssim_window_properties() {
        let g = SsimWindow::Gaussian11.weights();
        assert_eq!(g.len(), 121);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let peak = g[5 * 11 + 5];
        assert!(g.iter().all(|&v| v <= peak), "FAIL: gaussian peak not at center");
        // Symmetry under horizontal flip.
        for y in 0..11 {
            for x in 0..11 {
                assert!((g[y * 11 + x] - g[y * 11 + (10 - x)]).abs() < 1e-15);
            }
        }
        let u = SsimWindow::Uniform8.weights();
        assert_eq!(u.len(), 64);
        assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ssim(&Array3::zeros((3, 6, 6)), &Array3::zeros((3, 6, 6)), SsimWindow::Uniform8).is_err());
    }

    #[test]
    fn verification_separable_scores_reach_perfect_accuracy() {
        let scores = [
            (0.92, true),
            (0.85, true),
            (0.81, true),
            (0.40, false),
            (0.22, false),
            (0.05, false),
        ];
        let (acc, thr) = verification_accuracy(&scores).unwrap();
        assert_eq!(acc, 1.0, "FAIL: separable scores gave accuracy {acc}");
        assert!(
            (thr - (0.40 + 0.81) / 2.0).abs() < 1e-12,
            "FAIL: threshold {thr} is not the separating midpoint"
        );
    }

    #[test]
    fn verification_inseparable_scores_give_three_quarters_with_lowest_tie_threshold() {
        // Genuine {0.9, 0.3}, impostor {0.5, 0.1}: thresholds 0.2 and 0.7
        // both classify 3 of 4 pairs correctly; the sweep must keep 0.2.
        let scores = [(0.9, true), (0.3, true), (0.5, false), (0.1, false)];
        let (acc, thr) = verification_accuracy(&scores).unwrap();
        assert_eq!(acc, 0.75, "FAIL: best achievable accuracy is 0.75, got {acc}");
        assert!((thr - 0.2).abs() < 1e-12, "FAIL: tie not broken to lowest threshold ({thr})");
    }

    #[test]
    fn verification_matches_brute_force_sweep_on_random_scores() {
        let mut r = rng::stream(31, "metrics-test", &[1]);
        let scores: Vec<(f64, bool)> = (0..40)
            .map(|i| {
                let normal = Normal::new(if i % 2 == 0 { 0.6 } else { 0.3 }, 0.2).unwrap();
                (normal.sample(&mut r), i % 2 == 0)
            })
            .collect();
        let (acc, thr) = verification_accuracy(&scores).unwrap();
        // Brute force: accuracy at every candidate threshold, including the
        // chosen one, can never beat the sweep's answer.
        let acc_at = |t: f64| {
            scores.iter().filter(|&&(s, same)| (s >= t) == same).count() as f64 / scores.len() as f64
        };
        assert!((acc_at(thr) - acc).abs() < 1e-15, "FAIL: reported threshold does not reproduce accuracy");
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                let t = (scores[i].0 + scores[j].0) / 2.0;
                assert!(
                    acc_at(t) <= acc + 1e-15,
                    "FAIL: threshold {t} beats the sweep ({} > {acc})",
                    acc_at(t)
                );
            }
        }
    }

    #[test]
    fn verification_of_indistinguishable_scores_is_chance_level() {
        let scores = [(0.5, true), (0.5, true), (0.5, false), (0.5, false)];
        let (acc, _) = verification_accuracy(&scores).unwrap();
        assert_eq!(acc, 0.5, "FAIL: no separating threshold exists, accuracy must be 0.5");
    }

    #[test]
    fn verification_rejects_degenerate_inputs() {
        assert!(verification_accuracy(&[]).is_err(), "FAIL: empty input accepted");
        assert!(
            verification_accuracy(&[(0.9, true), (0.8, true)]).is_err(),
            "FAIL: single-class input accepted"
        );
        assert!(
            verification_accuracy(&[(f64::NAN, true), (0.1, false)]).is_err(),
            "FAIL: non-finite score accepted"
        );
    }

    #[test]
    fn psnr_and_ssim_agree_with_direct_formula_transcriptions() {
        // Independent oracles: straight re-transcriptions of the formulas,
        // kept apart from the production code paths.
        let a = randn3(41, (3, 16, 16), 0.3);
        let b = &a + &randn3(42, (3, 16, 16), 0.05);

        let mut se = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            let d = (x + 1.0) * 127.5 - (y + 1.0) * 127.5;
            se += d * d;
        }
        let want_psnr = 10.0 * (255.0f64 * 255.0 / (se / a.len() as f64)).log10();
        let got_psnr = psnr(&a, &b).unwrap();
        assert!(
            (got_psnr - want_psnr).abs() < 1e-6,
            "FAIL: psnr {got_psnr} vs transcription {want_psnr}"
        );

        for window in [SsimWindow::Gaussian11, SsimWindow::Uniform8] {
            let side = window.side();
            let wts = window.weights();
            let mut vals = Vec::new();
            for ch in 0..3 {
                for oy in 0..=16 - side {
                    for ox in 0..=16 - side {
                        let px: Vec<f64> = (0..side * side)
                            .map(|k| (a[[ch, oy + k / side, ox + k % side]] + 1.0) * 127.5)
                            .collect();
                        let py: Vec<f64> = (0..side * side)
                            .map(|k| (b[[ch, oy + k / side, ox + k % side]] + 1.0) * 127.5)
                            .collect();
                        let dot = |u: &[f64], v: &[f64]| -> f64 {
                            u.iter().zip(v).zip(&wts).map(|((x, y), g)| g * x * y).sum()
                        };
                        let ones = vec![1.0; side * side];
                        let (mx, my) = (dot(&px, &ones), dot(&py, &ones));
                        let (vx, vy, cov) = (
                            dot(&px, &px) - mx * mx,
                            dot(&py, &py) - my * my,
                            dot(&px, &py) - mx * my,
                        );
                        vals.push(
                            ((2.0 * mx * my + 6.5025) * (2.0 * cov + 58.5225))
                                / ((mx * mx + my * my + 6.5025) * (vx + vy + 58.5225)),
                        );
                    }
                }
            }
            let want = vals.iter().sum::<f64>() / vals.len() as f64;
            let got = ssim(&a, &b, window).unwrap();
            assert!(
                (got - want).abs() < 1e-6,
                "FAIL: ssim {got} vs transcription {want} under {window:?}"
            );
        }
    }

    #[test]
    fn bilinear_baseline_scores_are_finite_and_reasonable_on_toy_data() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = data::synth_toy_dataset(dir.path(), 2, 2, 16, 21).unwrap();
        let ds = Dataset::load(&manifest, 16, 4).unwrap();
        let baseline = BilinearBaseline { factor: 4 };
        let rows = evaluate_sr(&ds, &ds.val_indices, &[&baseline], SsimWindow::Uniform8).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label, "bilinear");
        assert_eq!(rows[0].n_images, 2);
        assert_eq!(rows[0].per_image.len(), 2);
        assert!(
            rows[0].psnr_db.is_finite() && rows[0].psnr_db > 5.0,
            "FAIL: baseline psnr {} is implausible",
            rows[0].psnr_db
        );
        assert!(
            rows[0].ssim > 0.0 && rows[0].ssim <= 1.0,
            "FAIL: baseline ssim {} out of range",
            rows[0].ssim
        );
        // Recomputation oracle: the summary means are the hand-averaged
        // per-image values.
        let mean_psnr = rows[0].per_image.iter().map(|r| r.psnr_db).sum::<f64>() / 2.0;
        let mean_ssim = rows[0].per_image.iter().map(|r| r.ssim).sum::<f64>() / 2.0;
        assert!((rows[0].psnr_db - mean_psnr).abs() < 1e-12, "FAIL: psnr mean mismatch");
        assert!((rows[0].ssim - mean_ssim).abs() < 1e-12, "FAIL: ssim mean mismatch");
    }

    #[test]
    fn verification_scores_on_toy_data_pair_correctly() {
        use crate::recognizer::{Recognizer, RecognizerSpec};
        let dir = tempfile::tempdir().unwrap();
        let manifest = data::synth_toy_dataset(dir.path(), 3, 3, 16, 25).unwrap();
        // Two val images per identity so positive pairs exist.
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("_img01.png,0,train", "_img01.png,0,val")
            .replace("_img01.png,1,train", "_img01.png,1,val")
            .replace("_img01.png,2,train", "_img01.png,2,val")).unwrap();
        let ds = Dataset::load(&manifest, 16, 4).unwrap();
        let rec = Recognizer::new(
            RecognizerSpec { widths: vec![2, 3, 4], embedding_dim: 8, input_size: 16 },
            3,
        )
        .unwrap();
        let pairs = data::make_verification_pairs(&ds, 5, 6).unwrap();
        let baseline = BilinearBaseline { factor: 4 };
        let scores = verification_scores(&rec, &baseline, &ds, &pairs).unwrap();
        assert_eq!(scores.len(), 6);
        for ((s, same), &(_, _, want)) in scores.iter().zip(pairs.iter()) {
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(s), "FAIL: cosine {s} out of range");
            assert_eq!(*same, want, "FAIL: pair labels shuffled");
        }
        let (acc, _) = verification_accuracy(&scores).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn untrained_generator_plugs_into_the_evaluation_harness() {
        use crate::topology::NetworkSpec;
        let dir = tempfile::tempdir().unwrap();
        let manifest = data::synth_toy_dataset(dir.path(), 2, 2, 16, 22).unwrap();
        let ds = Dataset::load(&manifest, 16, 4).unwrap();
        let gen = Generator::new(NetworkSpec::tiny(), 7).unwrap();
        let baseline = BilinearBaseline { factor: 4 };
        let rows = evaluate_sr(&ds, &ds.val_indices, &[&baseline, &gen], SsimWindow::Uniform8).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, "generator");
        assert!(rows[1].psnr_db.is_finite(), "FAIL: generator psnr not finite");
        let report = MetricReport::new(SsimWindow::Uniform8, rows, None);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("conventions") && json.contains("uniform8"), "FAIL: {json}");
    }

    #[test]
    fn perfect_upscaler_reports_infinite_psnr() {
        struct Cheat<'a>(&'a Dataset);
        impl Hallucinator for Cheat<'_> {
            fn label(&self) -> &str {
                "cheat"
            }
            fn upscale(&self, lr: &Array3<f64>) -> Result<Array3<f64>> {
                let want = lr.dim();
                Ok(self
                    .0
                    .hr
                    .iter()
                    .zip(&self.0.lr)
                    .find(|(_, l)| l.dim() == want && *l == lr)
                    .map(|(h, _)| h.clone())
                    .expect("lr image comes from the dataset"))
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let manifest = data::synth_toy_dataset(dir.path(), 2, 2, 16, 23).unwrap();
        let ds = Dataset::load(&manifest, 16, 4).unwrap();
        let cheat = Cheat(&ds);
        let rows = evaluate_sr(&ds, &ds.val_indices, &[&cheat], SsimWindow::Uniform8).unwrap();
        assert_eq!(rows[0].psnr_db, f64::INFINITY);
        assert!((rows[0].ssim - 1.0).abs() < 1e-12);
    }
}
