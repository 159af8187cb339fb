//! Parameters, forward pass and hand-written backward pass of the detector.
//!
//! Query-modulated path:
//!
//! ```text
//! image ─ conv/2 ─ conv/2 ─ conv/2 ─ ℓ2 (per location) ─┐
//!                                      [xy coords] ───┼─ concat ─ 1x1 fuse ─ 3x3 head ─ 1x1 predictor
//! query ─ fc w1 ─ relu ─ fc w2 ─ ℓ2 ─ tile ────────────┘
//! ```
//!
//! The baseline feeds the backbone output straight into the head.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::config::{DetectorConfig, DetectorMode};
use super::ops::{self, Geometry, Real};
use crate::encoding::QueryEncoding;
use crate::error::{Error, Result};
use crate::shapes::RasterImage;

/// Weight matrix `[out, in * k * k]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(out: usize, fan_in: usize) -> Self {
        Self {
            weight: Array2::zeros((out, fan_in)),
            bias: Array1::zeros(out),
        }
    }

    fn uniform<R: Rng + ?Sized>(out: usize, fan_in: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            weight: Array2::from_shape_simple_fn((out, fan_in), || {
                F::of(rng.random_range(-bound..=bound))
            }),
            bias: Array1::zeros(out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }

    fn apply(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = ops::matmul(self.weight.view(), x.view());
        ops::add_bias(&mut y, &self.bias);
        y
    }

    /// Accumulates `dW = dy · xᵀ`, `db = Σ dy` and returns `Wᵀ · dy` when needed.
    fn backward(&self, dy: &Array2<F>, x: &Array2<F>, grad: &mut Dense<F>, want_input: bool) -> Option<Array2<F>> {
        grad.weight += &ops::matmul(dy.view(), x.t());
        grad.bias += &dy.sum_axis(Axis(1));
        want_input.then(|| ops::matmul(self.weight.t(), dy.view()))
    }
}

/// Every learnable tensor of a detector. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub backbone: Vec<Dense<F>>,
    pub embed_w1: Option<Dense<F>>,
    pub embed_w2: Option<Dense<F>>,
    pub fuse: Option<Dense<F>>,
    pub head: Dense<F>,
    pub predictor: Dense<F>,
}

impl<F: Real> ParamSet<F> {
    pub fn zeros_like(&self) -> Self {
        Self {
            backbone: self.backbone.iter().map(Dense::zeros_like).collect(),
            embed_w1: self.embed_w1.as_ref().map(Dense::zeros_like),
            embed_w2: self.embed_w2.as_ref().map(Dense::zeros_like),
            fuse: self.fuse.as_ref().map(Dense::zeros_like),
            head: self.head.zeros_like(),
            predictor: self.predictor.zeros_like(),
        }
    }

    fn layers(&self) -> Vec<(String, &Dense<F>)> {
        let mut out: Vec<(String, &Dense<F>)> = self
            .backbone
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("backbone.{i}"), d))
            .collect();
        if let Some(d) = &self.embed_w1 {
            out.push(("embed.w1".into(), d));
        }
        if let Some(d) = &self.embed_w2 {
            out.push(("embed.w2".into(), d));
        }
        if let Some(d) = &self.fuse {
            out.push(("fuse".into(), d));
        }
        out.push(("head".into(), &self.head));
        out.push(("predictor".into(), &self.predictor));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense<F>> {
        let mut out: Vec<&mut Dense<F>> = self.backbone.iter_mut().collect();
        out.extend(self.embed_w1.as_mut());
        out.extend(self.embed_w2.as_mut());
        out.extend(self.fuse.as_mut());
        out.push(&mut self.head);
        out.push(&mut self.predictor);
        out
    }

    /// `(name, shape, values)` for every tensor, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        for (name, d) in self.layers() {
            out.push((
                format!("{name}.weight"),
                d.weight.shape().to_vec(),
                d.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("{name}.bias"),
                d.bias.shape().to_vec(),
                d.bias.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    /// Mutable flat views over the tensors, same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for d in self.layers_mut() {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector<F> {
    pub config: DetectorConfig,
    pub mode: DetectorMode,
    pub params: ParamSet<F>,
}

/// Raw predictor output for a batch: `[A * (K + 4), batch * cells]`, rows
/// are `A * K` class logits (anchor-major) followed by `A * 4` deltas.
#[derive(Debug, Clone)]
pub struct HeadOutput<F> {
    pub raw: Array2<F>,
    pub batch: usize,
    pub cells: usize,
    pub anchors_per_cell: usize,
    pub classes: usize,
}

impl<F: Real> HeadOutput<F> {
    /// Anchor index within an image is `cell * anchors_per_cell + scale`.
    fn locate(&self, image: usize, anchor: usize) -> (usize, usize) {
        let cell = anchor / self.anchors_per_cell;
        let a = anchor % self.anchors_per_cell;
        (a, image * self.cells + cell)
    }

    pub fn cls_row(&self, anchor_in_cell: usize, class: usize) -> usize {
        anchor_in_cell * self.classes + class
    }

    pub fn box_row(&self, anchor_in_cell: usize, k: usize) -> usize {
        self.anchors_per_cell * self.classes + anchor_in_cell * 4 + k
    }

    pub fn logit(&self, image: usize, anchor: usize, class: usize) -> F {
        let (a, col) = self.locate(image, anchor);
        self.raw[[self.cls_row(a, class), col]]
    }

    pub fn delta(&self, image: usize, anchor: usize, k: usize) -> F {
        let (a, col) = self.locate(image, anchor);
        self.raw[[self.box_row(a, k), col]]
    }

    pub fn num_anchors(&self) -> usize {
        self.cells * self.anchors_per_cell
    }

    /// Class logits `[anchors, K]` of one image.
    pub fn image_logits(&self, image: usize) -> Array2<F> {
        Array2::from_shape_fn((self.num_anchors(), self.classes), |(a, c)| self.logit(image, a, c))
    }

    /// Box deltas `[anchors, 4]` of one image.
    pub fn image_deltas(&self, image: usize) -> Array2<F> {
        Array2::from_shape_fn((self.num_anchors(), 4), |(a, k)| self.delta(image, a, k))
    }

    pub(crate) fn grad_index(&self, image: usize, anchor: usize, row_of: impl Fn(usize) -> usize) -> (usize, usize) {
        let (a, col) = self.locate(image, anchor);
        (row_of(a), col)
    }
}

struct FusionCache<F> {
    queries: Array2<F>,
    hidden: Array2<F>,
    embedding: Array2<F>,
    embedding_norms: Array1<F>,
    features: Array2<F>,
    feature_norms: Array1<F>,
    concat: Array2<F>,
    fused: Array2<F>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<F> {
    block_geoms: Vec<Geometry>,
    block_cols: Vec<Array2<F>>,
    block_out: Vec<Array2<F>>,
    feature_geom: Geometry,
    fusion: Option<FusionCache<F>>,
    head_cols: Array2<F>,
    head_out: Array2<F>,
}

impl<F: Real> ForwardCache<F> {
    /// Per-location-normalized backbone features (query-modulated mode).
    pub fn normalized_features(&self) -> Option<&Array2<F>> {
        self.fusion.as_ref().map(|f| &f.features)
    }

    /// ℓ2 norms of the query embeddings before normalization.
    pub fn embedding_norms(&self) -> Option<&Array1<F>> {
        self.fusion.as_ref().map(|f| &f.embedding_norms)
    }

    /// Unit-norm query embeddings `[embed_width, batch]`.
    pub fn embeddings(&self) -> Option<&Array2<F>> {
        self.fusion.as_ref().map(|f| &f.embedding)
    }
}

fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn lecun_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

impl<F: Real> ToyDetector<F> {
    pub fn init<R: Rng + ?Sized>(config: DetectorConfig, mode: DetectorMode, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut backbone = Vec::new();
        let mut cin = 3;
        for &cout in &config.backbone_channels {
            let fan_in = cin * 9;
            backbone.push(Dense::uniform(cout, fan_in, he_bound(fan_in), rng));
            cin = cout;
        }
        let d = config.feature_channels();
        let (embed_w1, embed_w2, fuse) = match mode {
            DetectorMode::Baseline => (None, None, None),
            DetectorMode::QueryModulated => {
                let q = config.query_len();
                let e = config.embed_width;
                let coords = if config.spatial_encoding { 2 } else { 0 };
                let fan = d + coords + e;
                (
                    Some(Dense::uniform(e, q, he_bound(q), rng)),
                    Some(Dense::uniform(e, e, lecun_bound(e), rng)),
                    Some(Dense::uniform(d, fan, he_bound(fan), rng)),
                )
            }
        };
        let head_fan = d * 9;
        let head = Dense::uniform(config.head_channels, head_fan, he_bound(head_fan), rng);
        let mut predictor = Dense::uniform(
            config.predictor_channels(),
            config.head_channels,
            0.1 * lecun_bound(config.head_channels),
            rng,
        );
        let prior = config.prior_probability;
        let bias = F::of(-((1.0 - prior) / prior).ln());
        let cls_rows = config.anchors_per_cell() * config.head_classes();
        predictor.bias.slice_mut(s![..cls_rows]).fill(bias);
        Ok(Self {
            config,
            mode,
            params: ParamSet {
                backbone,
                embed_w1,
                embed_w2,
                fuse,
                head,
                predictor,
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    fn check_inputs(&self, images: &[&RasterImage], queries: Option<&[QueryEncoding]>) -> Result<()> {
        let n = self.config.input_size;
        if images.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        for img in images {
            if img.height != n || img.width != n || img.pixels.len() != n * n * 3 {
                return Err(Error::Shape(format!(
                    "image {} is {}x{}, detector expects {n}x{n}x3",
                    img.image_id, img.height, img.width
                )));
            }
        }
        match (self.mode, queries) {
            (DetectorMode::Baseline, None) => Ok(()),
            (DetectorMode::Baseline, Some(_)) => {
                Err(Error::Shape("baseline detector takes no query".into()))
            }
            (DetectorMode::QueryModulated, None) => {
                Err(Error::Shape("query-modulated detector needs a query".into()))
            }
            (DetectorMode::QueryModulated, Some(qs)) => {
                if qs.len() != images.len() {
                    return Err(Error::Shape(format!(
                        "{} queries for {} images",
                        qs.len(),
                        images.len()
                    )));
                }
                let want = self.config.query_len();
                match qs.iter().find(|q| q.len() != want) {
                    Some(q) => Err(Error::Shape(format!(
                        "query length {} does not match expected {want}",
                        q.len()
                    ))),
                    None => Ok(()),
                }
            }
        }
    }

    fn input_matrix(&self, images: &[&RasterImage]) -> (Array2<F>, Geometry) {
        let n = self.config.input_size;
        let plane = n * n;
        let g = Geometry {
            batch: images.len(),
            height: n,
            width: n,
        };
        let mut x = Array2::<F>::zeros((3, g.columns()));
        let shift = F::of(0.5);
        for (b, img) in images.iter().enumerate() {
            for (p, px) in img.pixels.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    x[[c, b * plane + p]] = F::of(px[c] as f64) - shift;
                }
            }
        }
        (x, g)
    }

    fn coordinate_channels(&self, g: Geometry) -> Array2<F> {
        let mut coords = Array2::<F>::zeros((2, g.columns()));
        for b in 0..g.batch {
            for y in 0..g.height {
                for x in 0..g.width {
                    let col = (b * g.height + y) * g.width + x;
                    coords[[0, col]] = F::of(2.0 * (x as f64 + 0.5) / g.width as f64 - 1.0);
                    coords[[1, col]] = F::of(2.0 * (y as f64 + 0.5) / g.height as f64 - 1.0);
                }
            }
        }
        coords
    }

    /// Runs a batch through the network, keeping activations for backward.
    pub fn forward_batch(
        &self,
        images: &[&RasterImage],
        queries: Option<&[QueryEncoding]>,
    ) -> Result<(HeadOutput<F>, ForwardCache<F>)> {
        self.check_inputs(images, queries)?;
        let (mut x, mut g) = self.input_matrix(images);
        let mut block_geoms = Vec::new();
        let mut block_cols = Vec::new();
        let mut block_out = Vec::new();
        for layer in &self.params.backbone {
            let (cols, out) = ops::im2col(&x, g, 3, 2);
            let mut y = layer.apply(&cols);
            ops::relu_inplace(&mut y);
            block_geoms.push(g);
            block_cols.push(cols);
            block_out.push(y.clone());
            x = y;
            g = out;
        }
        let feature_geom = g;
        let cells = g.height * g.width;

        let (trunk, fusion) = match self.mode {
            DetectorMode::Baseline => (x, None),
            DetectorMode::QueryModulated => {
                let qs = queries.expect("checked above");
                let qlen = self.config.query_len();
                let mut qmat = Array2::<F>::zeros((qlen, qs.len()));
                for (b, q) in qs.iter().enumerate() {
                    for (i, v) in q.to_real::<F>().into_iter().enumerate() {
                        qmat[[i, b]] = v;
                    }
                }
                let w1 = self.params.embed_w1.as_ref().expect("query-modulated params");
                let w2 = self.params.embed_w2.as_ref().expect("query-modulated params");
                let fuse = self.params.fuse.as_ref().expect("query-modulated params");
                let mut hidden = w1.apply(&qmat);
                ops::relu_inplace(&mut hidden);
                let (embedding, embedding_norms) = ops::l2_normalize_columns(&w2.apply(&hidden));
                let (features, feature_norms) = ops::l2_normalize_columns(&x);

                let d = features.nrows();
                let coord_rows = if self.config.spatial_encoding { 2 } else { 0 };
                let e = embedding.nrows();
                let mut concat = Array2::<F>::zeros((d + coord_rows + e, g.columns()));
                concat.slice_mut(s![..d, ..]).assign(&features);
                if coord_rows > 0 {
                    concat
                        .slice_mut(s![d..d + 2, ..])
                        .assign(&self.coordinate_channels(g));
                }
                for b in 0..g.batch {
                    let col = embedding.column(b);
                    for p in 0..cells {
                        concat
                            .slice_mut(s![d + coord_rows.., b * cells + p])
                            .assign(&col);
                    }
                }
                let mut fused = fuse.apply(&concat);
                ops::relu_inplace(&mut fused);
                (
                    fused.clone(),
                    Some(FusionCache {
                        queries: qmat,
                        hidden,
                        embedding,
                        embedding_norms,
                        features,
                        feature_norms,
                        concat,
                        fused,
                    }),
                )
            }
        };

        let (head_cols, _) = ops::im2col(&trunk, g, 3, 1);
        let mut head_out = self.params.head.apply(&head_cols);
        ops::relu_inplace(&mut head_out);
        let raw = self.params.predictor.apply(&head_out);

        Ok((
            HeadOutput {
                raw,
                batch: images.len(),
                cells,
                anchors_per_cell: self.config.anchors_per_cell(),
                classes: self.config.head_classes(),
            },
            ForwardCache {
                block_geoms,
                block_cols,
                block_out,
                feature_geom,
                fusion,
                head_cols,
                head_out,
            },
        ))
    }

    /// Single-image forward: class logits `[anchors, K]` and deltas `[anchors, 4]`.
    pub fn forward(
        &self,
        image: &RasterImage,
        query: Option<&QueryEncoding>,
    ) -> Result<(Array2<F>, Array2<F>)> {
        let qs = query.map(|q| vec![q.clone()]);
        let (out, _) = self.forward_batch(&[image], qs.as_deref())?;
        Ok((out.image_logits(0), out.image_deltas(0)))
    }

    /// Backpropagates `d_raw` (gradient of the loss w.r.t. the raw head
    /// output) into a gradient for every parameter.
    pub fn backward(&self, cache: &ForwardCache<F>, d_raw: &Array2<F>) -> ParamSet<F> {
        let p = &self.params;
        let mut grad = p.zeros_like();

        let mut d_head = p
            .predictor
            .backward(d_raw, &cache.head_out, &mut grad.predictor, true)
            .expect("input gradient requested");
        ops::relu_backward(&mut d_head, &cache.head_out);
        let d_cols = p
            .head
            .backward(&d_head, &cache.head_cols, &mut grad.head, true)
            .expect("input gradient requested");
        let trunk_channels = match self.mode {
            DetectorMode::Baseline => self.config.feature_channels(),
            DetectorMode::QueryModulated => self.config.feature_channels(),
        };
        let d_trunk = ops::col2im(&d_cols, trunk_channels, cache.feature_geom, 3, 1);

        let mut d_x = match (&cache.fusion, self.mode) {
            (Some(f), DetectorMode::QueryModulated) => {
                let mut d_fused = d_trunk;
                ops::relu_backward(&mut d_fused, &f.fused);
                let fuse = p.fuse.as_ref().expect("query-modulated params");
                let d_concat = fuse
                    .backward(&d_fused, &f.concat, grad.fuse.as_mut().expect("fuse grad"), true)
                    .expect("input gradient requested");
                let d = f.features.nrows();
                let coord_rows = if self.config.spatial_encoding { 2 } else { 0 };
                let cells = cache.feature_geom.height * cache.feature_geom.width;
                let d_feat = d_concat.slice(s![..d, ..]).to_owned();
                let d_tiled = d_concat.slice(s![d + coord_rows.., ..]);
                let mut d_emb = Array2::<F>::zeros(f.embedding.raw_dim());
                for b in 0..cache.feature_geom.batch {
                    let block = d_tiled.slice(s![.., b * cells..(b + 1) * cells]);
                    d_emb.column_mut(b).assign(&block.sum_axis(Axis(1)));
                }
                let d_h2 = ops::l2_normalize_backward(&d_emb, &f.embedding, &f.embedding_norms);
                let w2 = p.embed_w2.as_ref().expect("query-modulated params");
                let mut d_hidden = w2
                    .backward(&d_h2, &f.hidden, grad.embed_w2.as_mut().expect("w2 grad"), true)
                    .expect("input gradient requested");
                ops::relu_backward(&mut d_hidden, &f.hidden);
                let w1 = p.embed_w1.as_ref().expect("query-modulated params");
                w1.backward(&d_hidden, &f.queries, grad.embed_w1.as_mut().expect("w1 grad"), false);
                ops::l2_normalize_backward(&d_feat, &f.features, &f.feature_norms)
            }
            _ => d_trunk,
        };

        for i in (0..p.backbone.len()).rev() {
            ops::relu_backward(&mut d_x, &cache.block_out[i]);
            let d_cols = p.backbone[i].backward(&d_x, &cache.block_cols[i], &mut grad.backbone[i], i > 0);
            if let Some(d_cols) = d_cols {
                let cin = p.backbone[i].weight.ncols() / 9;
                d_x = ops::col2im(&d_cols, cin, cache.block_geoms[i], 3, 2);
            }
        }
        grad
    }
}
