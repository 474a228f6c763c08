//! Synthetic GP datasets, CSV interchange and input standardization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GprError, Result};
use crate::kernel::{kernel_matrix, kernel_matrix_sym, Hyperparameters};
use crate::linalg::{Cholesky, JitterPolicy};

/// Up to this many points the latent function is drawn with one joint
/// factorization; larger draws proceed block by block.
pub const JOINT_SAMPLE_LIMIT: usize = 8192;
const SAMPLE_BLOCK: usize = 2048;

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_one")]
    pub lengthscale: f64,
    #[serde(default = "default_one")]
    pub signal_std: f64,
    pub noise_variance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn synth2(n_train: usize, n_test: usize, seed: u64) -> Self {
        SyntheticSpec {
            input_dim: 2,
            n_train,
            n_test,
            lengthscale: 1.0,
            signal_std: 1.0,
            noise_variance: 1e-6,
            seed,
        }
    }

    pub fn synth8(n_train: usize, n_test: usize, seed: u64) -> Self {
        SyntheticSpec {
            input_dim: 8,
            noise_variance: 1e-3,
            ..Self::synth2(n_train, n_test, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_train == 0 {
            return Err(GprError::Config(
                "synthetic data needs input_dim > 0 and n_train > 0".into(),
            ));
        }
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite())
            || !(self.signal_std > 0.0 && self.signal_std.is_finite())
        {
            return Err(GprError::Config("lengthscale and signal_std must be positive".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(GprError::Config("noise_variance must be non-negative".into()));
        }
        Ok(())
    }

    /// The generating hyperparameters. Noiseless specs get a noise level far
    /// below any jitter so the result remains a valid parameter vector.
    pub fn generative_hyperparameters(&self) -> Result<Hyperparameters> {
        let log_noise = if self.noise_variance > 0.0 {
            0.5 * self.noise_variance.ln()
        } else {
            -40.0
        };
        Hyperparameters::isotropic(self.lengthscale.ln(), self.signal_std.ln(), log_noise)
    }
}

/// Per-dimension affine input map fitted on the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Dimensions that were constant on the training set and kept scale 1.
    pub constant_dims: Vec<usize>,
    pub target_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub train_x: Array2<f64>,
    pub train_y: Array1<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array1<f64>,
    pub standardization: Option<StandardizationRecord>,
    pub synthetic: Option<SyntheticSpec>,
    /// Absolute diagonal jitter added while drawing the latent function.
    pub sampling_jitter: Option<f64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        train_x: Array2<f64>,
        train_y: Array1<f64>,
        test_x: Array2<f64>,
        test_y: Array1<f64>,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            train_x,
            train_y,
            test_x,
            test_y,
            standardization: None,
            synthetic: None,
            sampling_jitter: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.test_x.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_x.nrows() != self.train_y.len() {
            return Err(GprError::DimensionMismatch {
                expected: self.train_x.nrows(),
                got: self.train_y.len(),
            });
        }
        if self.test_x.nrows() != self.test_y.len() {
            return Err(GprError::DimensionMismatch {
                expected: self.test_x.nrows(),
                got: self.test_y.len(),
            });
        }
        if self.test_x.ncols() != self.train_x.ncols() {
            return Err(GprError::DimensionMismatch {
                expected: self.train_x.ncols(),
                got: self.test_x.ncols(),
            });
        }
        let finite = |a: &[f64]| a.iter().all(|v| v.is_finite());
        let all = [
            self.train_x.as_slice_memory_order(),
            self.train_y.as_slice_memory_order(),
            self.test_x.as_slice_memory_order(),
            self.test_y.as_slice_memory_order(),
        ];
        if all.iter().any(|s| s.is_some_and(|s| !finite(s))) {
            return Err(GprError::NonFinite(format!("dataset {}", self.name)));
        }
        Ok(())
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            input_dim: self.input_dim(),
            n_train: self.n_train(),
            n_test: self.n_test(),
            noise_variance: self.synthetic.as_ref().map(|s| s.noise_variance),
            seed: self.synthetic.as_ref().map(|s| s.seed),
            lengthscale: self.synthetic.as_ref().map(|s| s.lengthscale),
            signal_std: self.synthetic.as_ref().map(|s| s.signal_std),
            test_targets_noisy: self.synthetic.as_ref().map(|_| true),
            sampling_jitter: self.sampling_jitter,
            train_file: None,
            test_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_std: Option<f64>,
    /// Whether observation noise was added to the test targets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_targets_noisy: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_jitter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_file: Option<PathBuf>,
}

/// Groups bit-identical rows so duplicated inputs share one latent value.
fn unique_rows(x: ArrayView2<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut representatives = Vec::new();
    let mut slot = Vec::with_capacity(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        let next = representatives.len();
        let id = *seen.entry(key).or_insert(next);
        if id == next {
            representatives.push(i);
        }
        slot.push(id);
    }
    (representatives, slot)
}

/// Draws `f ~ N(0, K(x, x))` as `f = L z` with `L` built one block row at a
/// time; each diagonal block factors the Schur complement given all earlier
/// blocks, so the draw is exact in distribution for any block size. When a
/// block is numerically indefinite the whole draw restarts with the next
/// jitter level added to the full diagonal, keeping all blocks consistent.
/// Returns the draw and the jitter used.
pub fn sample_gp_prior(x: ArrayView2<f64>, hp: &Hyperparameters, z: ArrayView1<f64>) -> Result<(Array1<f64>, f64)> {
    let n = x.nrows();
    let block = if n <= JOINT_SAMPLE_LIMIT {
        n.max(1)
    } else {
        SAMPLE_BLOCK
    };
    sample_gp_prior_blocked(x, hp, z, block)
}

/// [`sample_gp_prior`] with an explicit block size. The block rows assemble
/// the ordinary Cholesky factor of `K + jitter·I`, so the draw for a given
/// `z` does not depend on `block` beyond rounding.
pub fn sample_gp_prior_blocked(
    x: ArrayView2<f64>,
    hp: &Hyperparameters,
    z: ArrayView1<f64>,
    block: usize,
) -> Result<(Array1<f64>, f64)> {
    let n = x.nrows();
    if z.len() != n {
        return Err(GprError::DimensionMismatch {
            expected: n,
            got: z.len(),
        });
    }
    if block == 0 {
        return Err(GprError::Config("sampling block size must be positive".into()));
    }
    let sf2 = hp.signal_variance();
    let mut attempted = Vec::new();
    for rel in JitterPolicy::default().levels() {
        let jitter = rel * sf2;
        attempted.push(jitter);
        match blocked_draw(x, hp, z, block, jitter) {
            Ok(f) => {
                if jitter > 0.0 {
                    log::debug!("prior draw over {n} points needed jitter {jitter:e}");
                }
                return Ok((f, jitter));
            }
            Err(GprError::NotPositiveDefinite { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(GprError::NotPositiveDefinite { order: n, attempted })
}

fn blocked_draw(
    x: ArrayView2<f64>,
    hp: &Hyperparameters,
    z: ArrayView1<f64>,
    block: usize,
    jitter: f64,
) -> Result<Array1<f64>> {
    let n = x.nrows();
    let exact = JitterPolicy {
        initial: 0.0,
        max: 0.0,
        growth: 10.0,
    };
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let range = |b: usize| starts[b]..(starts[b] + block).min(n);

    let mut diag: Vec<Cholesky> = Vec::new();
    // rows[b][j] = L_bj for j < b
    let mut rows: Vec<Vec<Array2<f64>>> = Vec::new();
    let mut f = Array1::zeros(n);
    for b in 0..starts.len() {
        let rb = range(b);
        let xb = x.slice(s![rb.clone(), ..]);
        let mut w: Vec<Array2<f64>> = Vec::with_capacity(b);
        for j in 0..b {
            let mut kbj = kernel_matrix(xb, x.slice(s![range(j), ..]), hp)?;
            for (k, wk) in w.iter().enumerate() {
                kbj -= &wk.dot(&rows[j][k].t());
            }
            // L_bj = K̃_bj L_jj⁻ᵀ
            let lbj = diag[j].solve_lower(kbj.t()).reversed_axes();
            w.push(lbj);
        }
        let mut schur = kernel_matrix_sym(xb, hp)?;
        schur.diag_mut().mapv_inplace(|d| d + jitter);
        for wk in &w {
            schur -= &wk.dot(&wk.t());
        }
        let sym = (&schur + &schur.t()) * 0.5;
        let lbb = Cholesky::factor(sym, &exact)?;
        let mut fb = lbb.l().dot(&z.slice(s![rb.clone()]));
        for (k, wk) in w.iter().enumerate() {
            fb += &wk.dot(&z.slice(s![range(k)]));
        }
        f.slice_mut(s![rb]).assign(&fb);
        diag.push(lbb);
        rows.push(w);
    }
    Ok(f)
}

/// Inputs from `N(0, I)`, a latent function from the zero-mean GP prior over
/// train and test inputs jointly, and independent noise on both target sets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let hp = spec.generative_hyperparameters()?;
    let n = spec.n_train + spec.n_test;
    let d = spec.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
    let (reps, slot) = unique_rows(x.view());
    let z = Array1::from_shape_fn(reps.len(), |_| StandardNormal.sample(&mut rng));
    let xu = x.select(Axis(0), &reps);
    let (fu, jitter) = sample_gp_prior(xu.view(), &hp, z.view())?;
    let noise_std = spec.noise_variance.sqrt();
    let y = Array1::from_shape_fn(n, |i| {
        let e: f64 = StandardNormal.sample(&mut rng);
        fu[slot[i]] + noise_std * e
    });
    let split = spec.n_train;
    let mut ds = Dataset::new(
        format!("synth{}", d),
        x.slice(s![..split, ..]).to_owned(),
        y.slice(s![..split]).to_owned(),
        x.slice(s![split.., ..]).to_owned(),
        y.slice(s![split..]).to_owned(),
    )?;
    ds.synthetic = Some(spec.clone());
    ds.sampling_jitter = Some(jitter);
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandardizeOptions {
    pub center_targets: bool,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions { center_targets: true }
    }
}

/// Maps every input dimension to zero mean and unit (population) standard
/// deviation on the training rows, applying the same map to the test rows.
pub fn standardize(ds: &Dataset, options: StandardizeOptions) -> Result<(Dataset, StandardizationRecord)> {
    ds.validate()?;
    let n = ds.n_train();
    if n == 0 {
        return Err(GprError::Degenerate("cannot standardize without training rows".into()));
    }
    let mean = ds.train_x.mean_axis(Axis(0)).expect("nonempty");
    let var = ds.train_x.var_axis(Axis(0), 0.0);
    let mut constant_dims = Vec::new();
    let scale: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(d, v)| {
            let sd = v.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                constant_dims.push(d);
                1.0
            }
        })
        .collect();
    for &d in &constant_dims {
        log::warn!("input dimension {d} is constant on the training set; leaving it unscaled");
    }
    let scale_arr = Array1::from(scale.clone());
    let apply = |x: &Array2<f64>| (x - &mean) / &scale_arr;
    let target_mean = options.center_targets.then(|| ds.train_y.mean().expect("nonempty"));
    let shift = target_mean.unwrap_or(0.0);
    let record = StandardizationRecord {
        input_mean: mean.to_vec(),
        input_scale: scale,
        constant_dims,
        target_mean,
    };
    let out = Dataset {
        name: ds.name.clone(),
        train_x: apply(&ds.train_x),
        train_y: ds.train_y.mapv(|v| v - shift),
        test_x: apply(&ds.test_x),
        test_y: ds.test_y.mapv(|v| v - shift),
        standardization: Some(record.clone()),
        synthetic: ds.synthetic.clone(),
        sampling_jitter: ds.sampling_jitter,
    };
    Ok((out, record))
}

/// Reads a numeric table whose last column is the target. A first line with
/// any non-numeric cell is taken as a header.
pub fn load_csv(path: &Path) -> Result<(Array2<f64>, Array1<f64>)> {
    let display = path.display().to_string();
    let parse_err = |line: usize, message: String| GprError::Parse {
        path: display.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|c| c.parse::<f64>()).collect();
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if k == 0 => continue,
            Err(_) => {
                let bad = record.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or("");
                return Err(parse_err(line, format!("non-numeric cell {bad:?}")));
            }
        };
        if parsed.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line, "non-finite value".into()));
        }
        match width {
            None => {
                if parsed.len() < 2 {
                    return Err(parse_err(line, "need at least one input column and a target".into()));
                }
                width = Some(parsed.len());
            }
            Some(w) if w != parsed.len() => {
                return Err(parse_err(line, format!("expected {w} columns, found {}", parsed.len())));
            }
            Some(_) => {}
        }
        values.extend(parsed);
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_err(1, "no data rows".into()))?;
    let table = Array2::from_shape_vec((rows, width), values).expect("rectangular");
    let x = table.slice(s![.., ..width - 1]).to_owned();
    let y = table.column(width - 1).to_owned();
    Ok((x, y))
}

/// Loads separate train and test tables into one dataset.
pub fn load_dataset(name: &str, train: &Path, test: &Path) -> Result<Dataset> {
    let (train_x, train_y) = load_csv(train)?;
    let (test_x, test_y) = load_csv(test)?;
    log::info!(
        "loaded {name}: {} training and {} test rows, {} inputs",
        train_x.nrows(),
        test_x.nrows(),
        train_x.ncols()
    );
    Dataset::new(name, train_x, train_y, test_x, test_y)
}

/// Writes inputs and targets with a `x0,…,x{D-1},y` header. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_csv(path: &Path, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(GprError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..x.ncols())
        .map(|d| format!("x{d}"))
        .chain(["y".to_string()])
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (row, t) in x.rows().into_iter().zip(y.iter()) {
        let mut line = String::new();
        for v in row.iter() {
            line.push_str(&format!("{v:?},"));
        }
        line.push_str(&format!("{t:?}"));
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `train.csv`, `test.csv` and `manifest.json` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    write_csv(&train, ds.train_x.view(), ds.train_y.view())?;
    write_csv(&test, ds.test_x.view(), ds.test_y.view())?;
    let mut manifest = ds.manifest();
    manifest.train_file = Some(PathBuf::from("train.csv"));
    manifest.test_file = Some(PathBuf::from("test.csv"));
    let file = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(manifest)
}
