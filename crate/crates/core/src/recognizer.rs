//! Face recognizer with an additive-angular-margin classification head.
//!
//! A small residual network maps a 112x112 face to an L2-normalized
//! embedding. During classification training, both the embedding and each
//! class weight row live on the unit hypersphere, so their product is the
//! cosine of the angle between them; the margin is added to the angle of the
//! target class before scaling, which forces classes apart angularly and
//! makes raw embedding cosine a meaningful verification score.

use ndarray::{ArrayD, ArrayView1, IxDyn};

use crate::autograd::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, l2_normalize_rows, log_sum_exp_rows, one_hot, prelu, Activation, ConvLayer,
    LinearLayer, StagedConv, StagedLinear,
};
use crate::rng;

/// Below this L2 norm an embedding is considered degenerate and refused
/// rather than normalized into noise.
pub const MIN_EMBED_NORM: f64 = 1e-12;

/// Embeddings fed to the margin loss must already be unit length; this is
/// the tolerance on that contract.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Floor for 1 - cos^2 inside the sqrt, keeping sin and its derivative finite
/// when an embedding aligns exactly with its class weight.
const SIN_SQ_FLOOR: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerSpec {
    /// Channel widths of the three down-sampling stages.
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub input_size: usize,
}

impl Default for RecognizerSpec {
    fn default() -> Self {
        RecognizerSpec {
            widths: vec![16, 32, 64],
            embedding_dim: 512,
            input_size: 112,
        }
    }
}

impl RecognizerSpec {
    pub fn tiny() -> Self {
        RecognizerSpec {
            embedding_dim: 64,
            ..RecognizerSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 3 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Shape(format!(
                "recognizer needs three positive stage widths, got {:?}",
                self.widths
            )));
        }
        if self.embedding_dim == 0 || self.input_size < 16 {
            return Err(Error::Shape(format!(
                "embedding dim must be positive and input size at least 16: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Residual unit: 3x3 (stride s) -> PReLU -> 3x3, plus a projection shortcut
/// when geometry changes, with PReLU after the addition.
#[derive(Debug, Clone)]
struct ResidualUnit {
    conv1: ConvLayer,
    conv2: ConvLayer,
    shortcut: Option<ConvLayer>,
    post_a: ArrayD<f64>,
}

struct StagedUnit {
    conv1: StagedConv,
    conv2: StagedConv,
    shortcut: Option<StagedConv>,
    post_a: NodeId,
}

impl ResidualUnit {
    fn new(seed: u64, label: &str, in_c: usize, out_c: usize, stride: usize) -> Self {
        let mut r1 = rng::stream(seed, &format!("{label}.conv1"), &[]);
        let mut r2 = rng::stream(seed, &format!("{label}.conv2"), &[]);
        let shortcut = (in_c != out_c || stride != 1).then(|| {
            let mut rs = rng::stream(seed, &format!("{label}.shortcut"), &[]);
            ConvLayer::new(&mut rs, in_c, out_c, 1, stride, 0, Activation::Linear)
        });
        ResidualUnit {
            conv1: ConvLayer::new(&mut r1, in_c, out_c, 3, stride, 1, Activation::PRelu),
            conv2: ConvLayer::new(&mut r2, out_c, out_c, 3, 1, 1, Activation::Linear),
            shortcut,
            post_a: ArrayD::from_elem(IxDyn(&[out_c]), 0.25),
        }
    }

    fn stage(&self, t: &mut Tape) -> StagedUnit {
        StagedUnit {
            conv1: self.conv1.stage(t),
            conv2: self.conv2.stage(t),
            shortcut: self.shortcut.as_ref().map(|s| s.stage(t)),
            post_a: t.leaf(self.post_a.clone()),
        }
    }

    fn params(&self) -> Vec<&ArrayD<f64>> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        if let Some(s) = &self.shortcut {
            p.extend(s.params());
        }
        p.push(&self.post_a);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        if let Some(s) = &mut self.shortcut {
            p.extend(s.params_mut());
        }
        p.push(&mut self.post_a);
        p
    }

    fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut n = self.conv1.param_names(&format!("{prefix}.conv1"));
        n.extend(self.conv2.param_names(&format!("{prefix}.conv2")));
        if let Some(s) = &self.shortcut {
            n.extend(s.param_names(&format!("{prefix}.shortcut")));
        }
        n.push(format!("{prefix}.post.a"));
        n
    }
}

impl StagedUnit {
    fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids = self.conv1.leaf_ids();
        ids.extend(self.conv2.leaf_ids());
        if let Some(s) = &self.shortcut {
            ids.extend(s.leaf_ids());
        }
        ids.push(self.post_a);
        ids
    }

    fn apply(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let h = self.conv1.apply(t, x);
        let h = self.conv2.apply(t, h);
        let sc = match &self.shortcut {
            Some(s) => s.apply(t, x),
            None => x,
        };
        let sum = t.add(h, sc);
        prelu(t, sum, self.post_a)
    }
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    pub spec: RecognizerSpec,
    stem: ConvLayer,
    units: Vec<ResidualUnit>,
    fc: LinearLayer,
}

pub struct StagedRecognizer {
    input_size: usize,
    stem: StagedConv,
    units: Vec<StagedUnit>,
    fc: StagedLinear,
}

impl Recognizer {
    pub fn new(spec: RecognizerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (w0, w1, w2) = (spec.widths[0], spec.widths[1], spec.widths[2]);
        let mut rs = rng::stream(seed, "fr.stem", &[]);
        let units = vec![
            ResidualUnit::new(seed, "fr.unit1", w0, w0, 2),
            ResidualUnit::new(seed, "fr.unit2", w0, w1, 2),
            ResidualUnit::new(seed, "fr.unit3", w1, w2, 2),
            ResidualUnit::new(seed, "fr.unit4", w2, w2, 1),
        ];
        let mut rf = rng::stream(seed, "fr.fc", &[]);
        Ok(Recognizer {
            stem: ConvLayer::new(&mut rs, 3, w0, 3, 2, 1, Activation::PRelu),
            units,
            fc: LinearLayer::new(&mut rf, w2, spec.embedding_dim),
            spec,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.stem.param_names("fr.stem");
        for (i, u) in self.units.iter().enumerate() {
            n.extend(u.param_names(&format!("fr.unit{}", i + 1)));
        }
        n.extend(self.fc.param_names("fr.fc"));
        n
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        let mut p = self.stem.params();
        for u in &self.units {
            p.extend(u.params());
        }
        p.extend(self.fc.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        let mut p = self.stem.params_mut();
        for u in &mut self.units {
            p.extend(u.params_mut());
        }
        p.extend(self.fc.params_mut());
        p
    }

    pub fn stage(&self, t: &mut Tape) -> StagedRecognizer {
        StagedRecognizer {
            input_size: self.spec.input_size,
            stem: self.stem.stage(t),
            units: self.units.iter().map(|u| u.stage(t)).collect(),
            fc: self.fc.stage(t),
        }
    }

    /// Normalized embeddings for a batch of plain image arrays.
    pub fn embed_values(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut t = Tape::new();
        let staged = self.stage(&mut t);
        let xid = t.leaf(x.clone());
        let e = staged.embed(&mut t, xid)?;
        Ok(t.value(e).clone())
    }
}

impl StagedRecognizer {
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut ids = self.stem.leaf_ids();
        for u in &self.units {
            ids.extend(u.leaf_ids());
        }
        ids.extend(self.fc.leaf_ids());
        ids
    }

    /// (N, 3, s, s) -> (N, d) rows on the unit sphere. Degenerate
    /// pre-normalization rows are an error, not a division by near-zero.
    pub fn embed(&self, t: &mut Tape, x: NodeId) -> Result<NodeId> {
        let shape = t.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.input_size || shape[3] != self.input_size {
            return Err(Error::Shape(format!(
                "recognizer expects (N, 3, {0}, {0}), got {shape:?}",
                self.input_size
            )));
        }
        let mut h = self.stem.apply(t, x);
        for u in &self.units {
            h = u.apply(t, h);
        }
        let pooled = global_avg_pool(t, h);
        let raw = self.fc.apply(t, pooled);
        for (i, row) in t.value(raw).outer_iter().enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < MIN_EMBED_NORM {
                return Err(Error::Train(format!(
                    "embedding {i} has degenerate norm {norm:e}; cannot normalize"
                )));
            }
        }
        Ok(l2_normalize_rows(t, raw))
    }
}

/// Angular-margin classification head: one weight row per identity.
#[derive(Debug, Clone)]
pub struct ArcFaceHead {
    pub w: ArrayD<f64>,
    pub scale: f64,
    pub margin: f64,
}

impl ArcFaceHead {
    pub fn new(seed: u64, num_classes: usize, embedding_dim: usize, scale: f64, margin: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "margin classification needs at least 2 classes, got {num_classes}"
            )));
        }
        if !(0.0..std::f64::consts::PI).contains(&margin) || scale <= 0.0 {
            return Err(Error::Config(format!(
                "invalid margin {margin} or scale {scale}"
            )));
        }
        let mut r = rng::stream(seed, "arcface.w", &[]);
        Ok(ArcFaceHead {
            w: crate::nn::he_normal(&mut r, &[num_classes, embedding_dim], embedding_dim),
            scale,
            margin,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn param_names(&self) -> Vec<String> {
        vec!["arcface.w".into()]
    }

    pub fn params(&self) -> Vec<&ArrayD<f64>> {
        vec![&self.w]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<f64>> {
        vec![&mut self.w]
    }

    pub fn stage(&self, t: &mut Tape) -> NodeId {
        t.leaf(self.w.clone())
    }
}

/// Additive-angular-margin softmax loss.
///
/// cos(theta + m) is expanded as cos*cos(m) - sin*sin(m); where theta + m
/// would exceed pi (cos(theta) <= cos(pi - m)) the monotonic surrogate
/// cos(theta) - m*sin(m) is used instead, keeping the penalty ordered in
/// theta. Branch masks are captured from values and are exact except on the
/// measure-zero boundary.
pub fn arcface_loss(
    t: &mut Tape,
    embeddings: NodeId,
    head_w: NodeId,
    labels: &[usize],
    scale: f64,
    margin: f64,
) -> Result<NodeId> {
    let eshape = t.value(embeddings).shape().to_vec();
    if eshape.len() != 2 {
        return Err(Error::Shape("embeddings must be (N, d)".into()));
    }
    let n = eshape[0];
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} embeddings but {} labels",
            labels.len()
        )));
    }
    let num_classes = t.value(head_w).shape()[0];
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!("label {bad} out of range for {num_classes} classes")));
    }
    for (i, row) in t.value(embeddings).outer_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Train(format!(
                "embedding {i} has norm {norm}, expected unit length"
            )));
        }
    }

    let wn = l2_normalize_rows(t, head_w);
    let cos = t.matmul(embeddings, wn, false, true); // (N, K)
    let oh = one_hot(t, labels, num_classes);
    let picked = t.mul(cos, oh);
    let ct = t.sum_samples(picked); // cos(theta_target), (N,)

    let (sin_m, cos_m) = margin.sin_cos();
    let ct2 = t.mul(ct, ct);
    let neg = t.scale(ct2, -1.0);
    let sin_sq = t.add_scalar(neg, 1.0);
    let sin_sq = crate::nn::clamp(t, sin_sq, SIN_SQ_FLOOR, 1.0);
    let st = t.sqrt(sin_sq);
    let a = t.scale(ct, cos_m);
    let b = t.scale(st, sin_m);
    let phi = t.sub(a, b); // cos(theta + m)

    // Past pi the additive margin would wrap around; switch to the linear
    // surrogate cos(theta) - m*sin(m), which stays monotonic in theta.
    let boundary = (std::f64::consts::PI - margin).cos();
    let safe = t.value(ct).mapv(|c| if c > boundary { 1.0 } else { 0.0 });
    let unsafe_m = safe.mapv(|v| 1.0 - v);
    let safe = t.leaf(safe);
    let unsafe_m = t.leaf(unsafe_m);
    let fallback = t.add_scalar(ct, -margin * sin_m);
    let phi_part = t.mul(safe, phi);
    let fb_part = t.mul(unsafe_m, fallback);
    let modified = t.add(phi_part, fb_part);

    let inv_oh = t.value(oh).mapv(|v| 1.0 - v);
    let inv_oh = t.leaf(inv_oh);
    let others = t.mul(cos, inv_oh);
    let modified_full = t.bcast_samples(modified, &[n, num_classes]);
    let target_part = t.mul(modified_full, oh);
    let mixed = t.add(others, target_part);
    let logits = t.scale(mixed, scale);

    let lse = log_sum_exp_rows(t, logits);
    let picked_logit = t.mul(logits, oh);
    let target_logit = t.sum_samples(picked_logit);
    let ce = t.sub(lse, target_logit);
    Ok(t.mean_all(ce))
}

/// Margin loss over two sub-batches scored against one shared head: the
/// count-weighted average, which equals the loss over the concatenation.
pub fn fr_batch_loss(
    t: &mut Tape,
    half_a: (NodeId, &[usize]),
    half_b: (NodeId, &[usize]),
    head_w: NodeId,
    scale: f64,
    margin: f64,
) -> Result<NodeId> {
    let (ea, la) = half_a;
    let (eb, lb) = half_b;
    let (na, nb) = (la.len(), lb.len());
    if na + nb == 0 {
        return Err(Error::Train("margin loss over an empty batch".into()));
    }
    if na == 0 {
        return arcface_loss(t, eb, head_w, lb, scale, margin);
    }
    if nb == 0 {
        return arcface_loss(t, ea, head_w, la, scale, margin);
    }
    let la_node = arcface_loss(t, ea, head_w, la, scale, margin)?;
    let lb_node = arcface_loss(t, eb, head_w, lb, scale, margin)?;
    let total = (na + nb) as f64;
    let wa = t.scale(la_node, na as f64 / total);
    let wb = t.scale(lb_node, nb as f64 / total);
    Ok(t.add(wa, wb))
}

/// Cosine similarity of two vectors.
pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < MIN_EMBED_NORM || nb < MIN_EMBED_NORM {
        return Err(Error::Metric("cosine of a degenerate vector".into()));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}
