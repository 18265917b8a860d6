//! Sliding-window guidance.
//!
//! A grid of `H x W` cells with `C` channels per cell is flattened
//! channel-last, index `(r * W + c) * C + ch`. A [`WindowPlan`] places `m^2`
//! crops of `k x l` cells at a fixed stride; each crop is denoised on its own
//! and the predictions are superimposed and divided by the per-cell overlap
//! count. Cells covered by two or more windows form the M-SWG mask.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{ClassId, Dataset};
use crate::denoiser::{check_sigma, Denoiser, DenoiserSpec};
use crate::error::{check_dim, Error, Result};
use crate::guidance::{DenoiserHandle, GuidanceRule, GuidanceTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Validation(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side, 1)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Length of the flattened vector.
    pub fn dim(&self) -> usize {
        self.cells() * self.channels
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    /// Repeats a per-cell value over the channels.
    pub fn expand<T: Copy>(&self, per_cell: &[T]) -> Vec<T> {
        per_cell
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, self.channels))
            .collect()
    }
}

/// Axis-aligned block of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn full(shape: &GridShape) -> Self {
        Self {
            top: 0,
            left: 0,
            height: shape.height,
            width: shape.width,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row)
            && (self.left..self.left + self.width).contains(&col)
    }

    pub fn check_within(&self, shape: &GridShape) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || self.top + self.height > shape.height
            || self.left + self.width > shape.width
        {
            return Err(Error::Validation(format!(
                "rect {}x{} at ({}, {}) does not fit a {}x{} grid",
                self.height, self.width, self.top, self.left, shape.height, shape.width
            )));
        }
        Ok(())
    }

    /// Flattened indices of the rect's entries, row-major with channels
    /// innermost, so the crop is itself a `height x width x C` grid.
    pub fn indices(&self, shape: &GridShape) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.height * self.width * shape.channels);
        for r in self.top..self.top + self.height {
            for c in self.left..self.left + self.width {
                for ch in 0..shape.channels {
                    out.push(shape.index(r, c, ch));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub shape: GridShape,
    /// Crop height.
    pub k: usize,
    /// Crop width.
    pub l: usize,
    pub stride_rows: usize,
    pub stride_cols: usize,
    pub rects: Vec<Rect>,
    /// `1 - s / k` along the rows.
    pub overlap_ratio: f64,
    indices: Vec<Vec<usize>>,
}

fn isqrt(n: usize) -> usize {
    let mut m = (n as f64).sqrt() as usize;
    while m * m > n {
        m -= 1;
    }
    while (m + 1) * (m + 1) <= n {
        m += 1;
    }
    m
}

/// Square crops, `k = l`.
pub fn plan_windows(shape: GridShape, k: usize, n: usize) -> Result<WindowPlan> {
    plan_windows_rect(shape, k, k, n)
}

/// `m x m` crops of `k x l` cells with `n = m^2`.
pub fn plan_windows_rect(shape: GridShape, k: usize, l: usize, n: usize) -> Result<WindowPlan> {
    let m = isqrt(n);
    if n == 0 || m * m != n {
        return Err(Error::NonSquareWindowCount(n));
    }
    if k == 0 || l == 0 || k > shape.height || l > shape.width {
        return Err(Error::Validation(format!(
            "window {k}x{l} does not fit a {}x{} grid (N={n})",
            shape.height, shape.width
        )));
    }
    let stride = |extent: usize, window: usize| -> Result<usize> {
        if m == 1 {
            if window != extent {
                return Err(Error::Validation(format!(
                    "a single window must cover the grid: H={extent}, k={window}, N=1"
                )));
            }
            return Ok(window);
        }
        if !(extent - window).is_multiple_of(m - 1) {
            return Err(Error::NonIntegralStride {
                extent,
                window,
                gaps: m - 1,
                windows: n,
            });
        }
        let s = (extent - window) / (m - 1);
        if s > window {
            return Err(Error::Validation(format!(
                "stride {s} exceeds window {window}, leaving cells uncovered (H={extent}, k={window}, N={n})"
            )));
        }
        Ok(s)
    };
    let stride_rows = stride(shape.height, k)?;
    let stride_cols = stride(shape.width, l)?;
    let mut rects = Vec::with_capacity(n);
    for i in 0..m {
        for j in 0..m {
            rects.push(Rect {
                top: i * stride_rows,
                left: j * stride_cols,
                height: k,
                width: l,
            });
        }
    }
    let indices = rects.iter().map(|r| r.indices(&shape)).collect();
    let overlap_ratio = if m == 1 {
        0.0
    } else {
        (k - stride_rows) as f64 / k as f64
    };
    Ok(WindowPlan {
        shape,
        k,
        l,
        stride_rows,
        stride_cols,
        rects,
        overlap_ratio,
        indices,
    })
}

impl WindowPlan {
    pub fn n_windows(&self) -> usize {
        self.rects.len()
    }

    /// `1 - s / l` along the columns.
    pub fn overlap_ratio_cols(&self) -> f64 {
        if self.rects.len() == 1 {
            0.0
        } else {
            (self.l - self.stride_cols) as f64 / self.l as f64
        }
    }

    /// Flattened indices covered by window `i`.
    pub fn window_indices(&self, i: usize) -> &[usize] {
        &self.indices[i]
    }

    pub fn overlap(&self) -> OverlapField {
        let mut counts = vec![0u32; self.shape.cells()];
        for rect in &self.rects {
            for r in rect.top..rect.top + rect.height {
                for c in rect.left..rect.left + rect.width {
                    counts[r * self.shape.width + c] += 1;
                }
            }
        }
        let mask = counts.iter().map(|&n| n >= 2).collect();
        OverlapField {
            shape: self.shape,
            counts,
            mask,
        }
    }
}

/// Per-cell window counts and the derived mask `counts >= 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapField {
    pub shape: GridShape,
    pub counts: Vec<u32>,
    pub mask: Vec<bool>,
}

impl OverlapField {
    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.shape.width + col]
    }

    /// Mask repeated over channels, matching the flattened grid.
    pub fn flat_mask(&self) -> Vec<bool> {
        self.shape.expand(&self.mask)
    }

    pub fn is_mask_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    fn grid_csv<T: std::fmt::Display>(&self, values: impl Iterator<Item = T>) -> String {
        let values: Vec<String> = values.map(|v| v.to_string()).collect();
        let mut out = String::new();
        for row in values.chunks(self.shape.width) {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn counts_csv(&self) -> String {
        self.grid_csv(self.counts.iter())
    }

    pub fn mask_csv(&self) -> String {
        self.grid_csv(self.mask.iter().map(|&m| u8::from(m)))
    }

    /// Plain (P2) PGM of the counts.
    pub fn counts_pgm(&self) -> String {
        let maxval = self.counts.iter().copied().max().unwrap_or(1).max(1);
        self.pgm(self.counts.iter().copied(), maxval)
    }

    /// Plain (P2) PGM of the mask with values 0 and 1.
    pub fn mask_pgm(&self) -> String {
        self.pgm(self.mask.iter().map(|&m| u32::from(m)), 1)
    }

    fn pgm(&self, values: impl Iterator<Item = u32>, maxval: u32) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "P2\n{} {}\n{maxval}",
            self.shape.width, self.shape.height
        );
        out.push_str(&self.grid_csv(values).replace(',', " "));
        out
    }
}

/// Denoiser spec over `rect`-sized crops: the same kind, blur and
/// conditioning as `base`, on the dataset with every point cropped to `rect`.
pub fn crop_restricted_denoiser(
    base: &DenoiserSpec,
    shape: &GridShape,
    rect: &Rect,
) -> Result<DenoiserSpec> {
    rect.check_within(shape)?;
    let dataset = base.dataset();
    if dataset.dim() != shape.dim() {
        return Err(Error::IncompatibleDenoiser(format!(
            "dataset dimension {} does not match a {}x{}x{} grid",
            dataset.dim(),
            shape.height,
            shape.width,
            shape.channels
        )));
    }
    let cropped = Arc::new(dataset.select_coordinates(&rect.indices(shape))?);
    DenoiserSpec::with_delta(cropped, base.delta())?.with_conditioning(base.conditioning())
}

/// Something that can denoise individual crops of a grid.
pub trait WindowDenoiser: Send + Sync + std::fmt::Debug {
    fn denoise_crop(
        &self,
        rect: &Rect,
        crop: &[f64],
        sigma: f64,
        class: Option<ClassId>,
    ) -> Result<Vec<f64>>;

    fn predict_noise_crop(
        &self,
        rect: &Rect,
        crop: &[f64],
        sigma: f64,
        class: Option<ClassId>,
    ) -> Result<Vec<f64>> {
        check_sigma(sigma)?;
        let y = self.denoise_crop(rect, crop, sigma, class)?;
        Ok(crop.iter().zip(&y).map(|(x, y)| (x - y) / sigma).collect())
    }

    fn requires_class(&self) -> bool {
        false
    }
}

/// One model applied to every crop, whatever its position.
#[derive(Debug, Clone)]
pub struct SharedWindow(pub DenoiserHandle);

impl SharedWindow {
    fn check(&self, crop: &[f64]) -> Result<()> {
        if self.0.dim() != crop.len() {
            return Err(Error::IncompatibleDenoiser(format!(
                "window denoiser takes {} inputs but the crop has {}",
                self.0.dim(),
                crop.len()
            )));
        }
        Ok(())
    }
}

impl WindowDenoiser for SharedWindow {
    fn denoise_crop(
        &self,
        _: &Rect,
        crop: &[f64],
        sigma: f64,
        class: Option<ClassId>,
    ) -> Result<Vec<f64>> {
        self.check(crop)?;
        self.0.denoise(crop, sigma, class)
    }

    fn predict_noise_crop(
        &self,
        _: &Rect,
        crop: &[f64],
        sigma: f64,
        class: Option<ClassId>,
    ) -> Result<Vec<f64>> {
        self.check(crop)?;
        self.0.predict_noise(crop, sigma, class)
    }

    fn requires_class(&self) -> bool {
        self.0.requires_class()
    }
}

/// Crop-restricted denoisers, one per window of a plan.
#[derive(Debug, Clone)]
pub struct CropDenoisers {
    windows: Vec<(Rect, DenoiserSpec)>,
}

impl CropDenoisers {
    pub fn new(base: &DenoiserSpec, plan: &WindowPlan) -> Result<Self> {
        let windows = plan
            .rects
            .iter()
            .map(|rect| Ok((*rect, crop_restricted_denoiser(base, &plan.shape, rect)?)))
            .collect::<Result<_>>()?;
        Ok(Self { windows })
    }

    fn lookup(&self, rect: &Rect) -> Result<&DenoiserSpec> {
        self.windows
            .iter()
            .find(|(r, _)| r == rect)
            .map(|(_, d)| d)
            .ok_or_else(|| {
                Error::IncompatibleDenoiser(format!(
                    "no crop denoiser for the {}x{} window at ({}, {})",
                    rect.height, rect.width, rect.top, rect.left
                ))
            })
    }
}

impl WindowDenoiser for CropDenoisers {
    fn denoise_crop(
        &self,
        rect: &Rect,
        crop: &[f64],
        sigma: f64,
        class: Option<ClassId>,
    ) -> Result<Vec<f64>> {
        self.lookup(rect)?.denoise(crop, sigma, class)
    }

    fn predict_noise_crop(
        &self,
        rect: &Rect,
        crop: &[f64],
        sigma: f64,
        class: Option<ClassId>,
    ) -> Result<Vec<f64>> {
        self.lookup(rect)?.predict_noise(crop, sigma, class)
    }

    fn requires_class(&self) -> bool {
        self.windows.iter().any(|(_, d)| d.requires_class())
    }
}

#[derive(Clone, Copy)]
enum Space {
    Noise,
    Target,
}

fn superimpose(
    window: &dyn WindowDenoiser,
    x: &[f64],
    sigma: f64,
    plan: &WindowPlan,
    class: Option<ClassId>,
    space: Space,
) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    check_dim(plan.shape.dim(), x.len())?;
    let crops: Vec<Vec<f64>> = (0..plan.n_windows())
        .into_par_iter()
        .map(|i| {
            let idx = plan.window_indices(i);
            let crop: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
            let rect = &plan.rects[i];
            let out = match space {
                Space::Noise => window.predict_noise_crop(rect, &crop, sigma, class)?,
                Space::Target => window.denoise_crop(rect, &crop, sigma, class)?,
            };
            if out.len() != idx.len() {
                return Err(Error::IncompatibleDenoiser(format!(
                    "window prediction has {} entries, crop has {}",
                    out.len(),
                    idx.len()
                )));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    // Sequential reduction in window order keeps the sum bit-reproducible.
    let mut sum = vec![0.0; x.len()];
    let mut count = vec![0u32; x.len()];
    for (i, crop) in crops.iter().enumerate() {
        for (&j, v) in plan.window_indices(i).iter().zip(crop) {
            sum[j] += v;
            count[j] += 1;
        }
    }
    for (s, &n) in sum.iter_mut().zip(&count) {
        *s /= f64::from(n);
    }
    Ok(sum)
}

/// SWG negative noise prediction: per-crop predictions averaged by overlap.
pub fn swg_negative(
    window: &dyn WindowDenoiser,
    x: &[f64],
    sigma: f64,
    plan: &WindowPlan,
    class: Option<ClassId>,
) -> Result<Vec<f64>> {
    superimpose(window, x, sigma, plan, class, Space::Noise)
}

/// The SWG composite as a full-grid [`Denoiser`].
#[derive(Debug, Clone)]
pub struct SlidingWindowDenoiser {
    plan: WindowPlan,
    window: Arc<dyn WindowDenoiser>,
}

impl SlidingWindowDenoiser {
    pub fn new(plan: WindowPlan, window: Arc<dyn WindowDenoiser>) -> Self {
        Self { plan, window }
    }

    /// Crop-restricted versions of `base` on every window of `plan`.
    pub fn crop_restricted(base: &DenoiserSpec, plan: WindowPlan) -> Result<Self> {
        let window = Arc::new(CropDenoisers::new(base, &plan)?);
        Ok(Self::new(plan, window))
    }

    pub fn plan(&self) -> &WindowPlan {
        &self.plan
    }
}

impl Denoiser for SlidingWindowDenoiser {
    fn dim(&self) -> usize {
        self.plan.shape.dim()
    }

    /// Averages crop targets; equivalent to averaging noise predictions since
    /// every crop sees the same `x` and `sigma`.
    fn denoise(&self, x: &[f64], sigma: f64, class: Option<ClassId>) -> Result<Vec<f64>> {
        superimpose(
            self.window.as_ref(),
            x,
            sigma,
            &self.plan,
            class,
            Space::Target,
        )
    }

    fn predict_noise(&self, x: &[f64], sigma: f64, class: Option<ClassId>) -> Result<Vec<f64>> {
        swg_negative(self.window.as_ref(), x, sigma, &self.plan, class)
    }

    fn requires_class(&self) -> bool {
        self.window.requires_class()
    }
}

/// A (M-)SWG rule and a warning when the mask selects no cell.
#[derive(Debug, Clone)]
pub struct SwgRule {
    pub rule: GuidanceRule,
    pub warning: Option<String>,
}

/// SWG guidance with the crop-restricted version of `positive` as negative.
pub fn mswg_rule(
    positive: Arc<DenoiserSpec>,
    plan: &WindowPlan,
    w: f64,
    masked: bool,
) -> Result<SwgRule> {
    let negative = Arc::new(SlidingWindowDenoiser::crop_restricted(
        &positive,
        plan.clone(),
    )?);
    mswg_rule_with(positive, negative, w, masked)
}

/// SWG guidance with an explicit sliding-window negative.
pub fn mswg_rule_with(
    positive: DenoiserHandle,
    negative: Arc<SlidingWindowDenoiser>,
    w: f64,
    masked: bool,
) -> Result<SwgRule> {
    let overlap = negative.plan().overlap();
    let plan = negative.plan();
    let warning = (masked && overlap.is_mask_empty()).then(|| {
        format!(
            "M-SWG mask is empty for H={}, k={}, N={} (r = {}); guidance reduces to the positive predictor",
            plan.shape.height,
            plan.k,
            plan.n_windows(),
            plan.overlap_ratio
        )
    });
    let mut rule = GuidanceRule::new(positive).with_term(GuidanceTerm::new(negative, w))?;
    if masked {
        rule = rule.with_mask(overlap.flat_mask())?;
    }
    Ok(SwgRule { rule, warning })
}

/// Two grids that agree everywhere except two diagonally opposite
/// `patch x patch` corners, which hold `+1` in the first image and `-1` in the
/// second. Labelled 0 and 1.
pub fn corner_pair(shape: GridShape, patch: usize) -> Result<Dataset> {
    if patch == 0 || 2 * patch > shape.height.min(shape.width) {
        return Err(Error::Validation(format!(
            "patch {patch} does not fit twice into a {}x{} grid",
            shape.height, shape.width
        )));
    }
    let corners = [
        Rect {
            top: 0,
            left: 0,
            height: patch,
            width: patch,
        },
        Rect {
            top: shape.height - patch,
            left: shape.width - patch,
            height: patch,
            width: patch,
        },
    ];
    let image = |sign: f64| {
        let mut v = vec![0.0; shape.dim()];
        for rect in &corners {
            for j in rect.indices(&shape) {
                v[j] = sign;
            }
        }
        v
    };
    Dataset::new(vec![image(1.0), image(-1.0)], Some(vec![0, 1]))
}

/// Per window, the index of the dataset point nearest to `x` on that window's
/// cells. Windows on which all dataset points agree carry no vote (`None`).
pub fn window_votes(dataset: &Dataset, plan: &WindowPlan, x: &[f64]) -> Result<Vec<Option<usize>>> {
    check_dim(plan.shape.dim(), x.len())?;
    check_dim(plan.shape.dim(), dataset.dim())?;
    Ok((0..plan.n_windows())
        .map(|w| {
            let idx = plan.window_indices(w);
            let first = dataset.point(0);
            let informative = dataset
                .points()
                .any(|p| idx.iter().any(|&j| p[j] != first[j]));
            informative.then(|| {
                let d2 = |p: &[f64]| {
                    idx.iter()
                        .map(|&j| (p[j] - x[j]) * (p[j] - x[j]))
                        .sum::<f64>()
                };
                let mut best = (0, f64::INFINITY);
                for (i, p) in dataset.points().enumerate() {
                    let d = d2(p);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best.0
            })
        })
        .collect())
}

/// Whether every voting window of `x` picks the same dataset point.
pub fn is_coherent(dataset: &Dataset, plan: &WindowPlan, x: &[f64]) -> Result<bool> {
    let votes = window_votes(dataset, plan, x)?;
    let mut voted = votes.iter().flatten();
    Ok(match voted.next() {
        Some(first) => voted.all(|v| v == first),
        None => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape8() -> GridShape {
        GridShape::square(8).unwrap()
    }

    #[test]
    fn plan_64_40_4() {
        let plan = plan_windows(GridShape::square(64).unwrap(), 40, 4).unwrap();
        assert_eq!(plan.stride_rows, 24);
        assert_eq!(plan.overlap_ratio, 0.4);
        let offsets: Vec<(usize, usize)> = plan.rects.iter().map(|r| (r.top, r.left)).collect();
        assert_eq!(offsets, vec![(0, 0), (0, 24), (24, 0), (24, 24)]);
    }

    #[test]
    fn corner_windows_vote_for_their_image() {
        let shape = shape8();
        let ds = corner_pair(shape, 3).unwrap();
        let plan = plan_windows(shape, 5, 4).unwrap();
        assert_eq!(
            window_votes(&ds, &plan, ds.point(1)).unwrap(),
            vec![Some(1), None, None, Some(1)]
        );
        assert!(is_coherent(&ds, &plan, ds.point(0)).unwrap());
        // Top-left corner from image 0, bottom-right from image 1.
        let mut mixed = ds.point(0).to_vec();
        let corner = Rect {
            top: 5,
            left: 5,
            height: 3,
            width: 3,
        };
        for j in corner.indices(&shape) {
            mixed[j] = -1.0;
        }
        assert!(!is_coherent(&ds, &plan, &mixed).unwrap());
    }

    #[test]
    fn no_overlap_plan_has_empty_mask() {
        let plan = plan_windows(GridShape::square(64).unwrap(), 32, 4).unwrap();
        assert_eq!(plan.stride_rows, 32);
        assert_eq!(plan.overlap_ratio, 0.0);
        let field = plan.overlap();
        assert!(field.is_mask_empty());
        assert!(field.counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn counts_on_8_5_4() {
        let field = plan_windows(shape8(), 5, 4).unwrap().overlap();
        for r in 0..8 {
            for c in 0..8 {
                let band = |i: usize| (3..5).contains(&i);
                let expected = match (band(r), band(c)) {
                    (true, true) => 4,
                    (true, false) | (false, true) => 2,
                    (false, false) => 1,
                };
                assert_eq!(field.count(r, c), expected, "cell ({r}, {c})");
            }
        }
    }

    #[test]
    fn plan_errors() {
        assert_eq!(
            plan_windows(shape8(), 5, 3),
            Err(Error::NonSquareWindowCount(3))
        );
        assert!(matches!(
            plan_windows(GridShape::square(64).unwrap(), 41, 9),
            Err(Error::NonIntegralStride {
                extent: 64,
                window: 41,
                gaps: 2,
                windows: 9
            })
        ));
        assert!(plan_windows(shape8(), 9, 4).is_err());
        assert!(plan_windows(shape8(), 5, 1).is_err());
        // stride 6 > k 2 would leave gaps
        assert!(plan_windows(shape8(), 2, 4).is_err());
        let single = plan_windows(shape8(), 8, 1).unwrap();
        assert_eq!((single.stride_rows, single.overlap_ratio), (8, 0.0));
        let err = plan_windows(GridShape::square(64).unwrap(), 41, 9)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("H=64") && err.contains("k=41") && err.contains("N=9"),
            "{err}"
        );
    }

    #[test]
    fn rectangular_plan() {
        let shape = GridShape::new(8, 12, 2).unwrap();
        let plan = plan_windows_rect(shape, 5, 8, 4).unwrap();
        assert_eq!((plan.stride_rows, plan.stride_cols), (3, 4));
        assert_eq!(plan.overlap_ratio_cols(), 0.5);
        assert_eq!(plan.window_indices(0).len(), 5 * 8 * 2);
        assert_eq!(plan.overlap().flat_mask().len(), shape.dim());
    }

    #[derive(Debug)]
    struct Constant(f64);

    impl WindowDenoiser for Constant {
        fn denoise_crop(
            &self,
            _: &Rect,
            crop: &[f64],
            _: f64,
            _: Option<ClassId>,
        ) -> Result<Vec<f64>> {
            Ok(vec![self.0; crop.len()])
        }
    }

    #[test]
    fn averaging_preserves_constants() {
        let plan = plan_windows(shape8(), 5, 4).unwrap();
        let x: Vec<f64> = (0..64).map(|i| i as f64 * 0.1).collect();
        let y = superimpose(&Constant(0.7), &x, 1.0, &plan, None, Space::Target).unwrap();
        assert!(y.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn single_window_is_the_full_denoiser() {
        let ds = Arc::new(corner_pair(shape8(), 3).unwrap());
        let base = DenoiserSpec::optimal(ds);
        let plan = plan_windows(shape8(), 8, 1).unwrap();
        let swg = SlidingWindowDenoiser::crop_restricted(&base, plan).unwrap();
        let x: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5).collect();
        assert_eq!(
            swg.predict_noise(&x, 0.8, None).unwrap(),
            base.predict_noise(&x, 0.8, None).unwrap()
        );
    }

    #[test]
    fn shared_window_rejects_wrong_crop_size() {
        let ds = Arc::new(Dataset::triangle(1.0));
        let window = SharedWindow(Arc::new(DenoiserSpec::optimal(ds)));
        let plan = plan_windows(shape8(), 5, 4).unwrap();
        let err = swg_negative(&window, &[0.0; 64], 1.0, &plan, None).unwrap_err();
        assert!(matches!(err, Error::IncompatibleDenoiser(_)));
    }

    #[test]
    fn target_and_noise_averaging_agree() {
        let ds = Arc::new(corner_pair(shape8(), 3).unwrap());
        let base = DenoiserSpec::error_prone(ds, 0.3).unwrap();
        let swg =
            SlidingWindowDenoiser::crop_restricted(&base, plan_windows(shape8(), 5, 4).unwrap())
                .unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let sigma = 0.6;
        let y = swg.denoise(&x, sigma, None).unwrap();
        let eps = swg.predict_noise(&x, sigma, None).unwrap();
        for j in 0..64 {
            assert!(((x[j] - y[j]) / sigma - eps[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_warns() {
        let shape = GridShape::square(8).unwrap();
        let ds = Arc::new(corner_pair(shape, 2).unwrap());
        let pos = Arc::new(DenoiserSpec::optimal(ds));
        let plan = plan_windows(shape, 4, 4).unwrap();
        assert_eq!(plan.overlap_ratio, 0.0);
        let r = mswg_rule(pos.clone(), &plan, 2.0, true).unwrap();
        assert!(r.warning.is_some());
        let r = mswg_rule(pos, &plan, 2.0, false).unwrap();
        assert!(r.warning.is_none());
    }

    #[test]
    fn corner_pair_layout() {
        let ds = corner_pair(shape8(), 3).unwrap();
        let a = ds.point(0);
        assert_eq!(a[0], 1.0);
        assert_eq!(a[63], 1.0);
        assert_eq!(a[3], 0.0);
        assert_eq!(ds.point(1)[63], -1.0);
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 18);
        assert!(corner_pair(shape8(), 5).is_err());
    }

    #[test]
    fn pgm_and_csv_exports() {
        let field = plan_windows(shape8(), 5, 4).unwrap().overlap();
        let csv = field.counts_csv();
        assert_eq!(csv.lines().next().unwrap(), "1,1,1,2,2,1,1,1");
        assert_eq!(csv.lines().nth(3).unwrap(), "2,2,2,4,4,2,2,2");
        let pgm = field.mask_pgm();
        assert!(pgm.starts_with("P2\n8 8\n1\n0 0 0 1 1 0 0 0\n"));
    }
}
