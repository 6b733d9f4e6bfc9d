//! Magnetogram features computed from 2-D field grids: gradient statistics,
//! Haar wavelet energies, flux sums and the SHARP summation parameters.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this variance the skewness and kurtosis are reported as 0.
const MOMENT_VAR_FLOOR: f64 = 1e-24;

/// Wavelet levels used for frame features.
pub const HAAR_LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
    pixel_area: f64,
}

impl FieldGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>, pixel_area: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("grid dimensions {height}×{width} must be positive")));
        }
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "grid {height}×{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if !(pixel_area > 0.0 && pixel_area.is_finite()) {
            return Err(Error::config(format!("pixel area {pixel_area} must be positive")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("grid contains non-finite values".into()));
        }
        Ok(Self { height, width, values, pixel_area })
    }

    pub fn from_rows(rows: &[Vec<f64>], pixel_area: f64) -> Result<Self> {
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::shape("ragged grid rows"));
        }
        Self::new(rows.len(), w, rows.concat(), pixel_area)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_area
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn same_layout(&self, other: &FieldGrid) -> bool {
        self.height == other.height && self.width == other.width && self.pixel_area == other.pixel_area
    }
}

/// Component maps for the SHARP summations. All grids share shape and pixel area.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldMaps {
    pub bz: FieldGrid,
    pub jz: FieldGrid,
    pub shear_deg: FieldGrid,
    pub b_obs: FieldGrid,
    pub b_pot: FieldGrid,
}

impl VectorFieldMaps {
    pub fn new(bz: FieldGrid, jz: FieldGrid, shear_deg: FieldGrid, b_obs: FieldGrid, b_pot: FieldGrid) -> Result<Self> {
        for (name, g) in [("jz", &jz), ("shear", &shear_deg), ("b_obs", &b_obs), ("b_pot", &b_pot)] {
            if !bz.same_layout(g) {
                return Err(Error::shape(format!(
                    "{name} grid {}×{} (dA {}) differs from bz {}×{} (dA {})",
                    g.height, g.width, g.pixel_area, bz.height, bz.width, bz.pixel_area
                )));
            }
        }
        Ok(Self { bz, jz, shear_deg, b_obs, b_pot })
    }

    /// Builds maps from five grids in the order bz, jz, shear, b_obs, b_pot.
    pub fn from_grids(grids: Vec<FieldGrid>) -> Result<Self> {
        let [bz, jz, shear, obs, pot]: [FieldGrid; 5] = grids
            .try_into()
            .map_err(|g: Vec<FieldGrid>| Error::shape(format!("vector maps need 5 grids, got {}", g.len())))?;
        Self::new(bz, jz, shear, obs, pot)
    }
}

/// Summary statistics of the gradient magnitude field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
}

impl GradientStats {
    pub fn to_array(self) -> [f64; 7] {
        [self.mean, self.std, self.median, self.min, self.max, self.skewness, self.kurtosis]
    }
}

/// Derivative of `v` at index `i` along a line of `n` unit-spaced samples.
fn derivative(n: usize, i: usize, v: impl Fn(usize) -> f64) -> f64 {
    if i == 0 {
        v(1) - v(0)
    } else if i == n - 1 {
        v(n - 1) - v(n - 2)
    } else {
        (v(i + 1) - v(i - 1)) / 2.0
    }
}

/// Gradient magnitude at every pixel, row-major.
pub fn gradient_magnitude(grid: &FieldGrid) -> Result<Vec<f64>> {
    let (h, w) = (grid.height, grid.width);
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("gradient needs at least 2×2 pixels, got {h}×{w}")));
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let gx = derivative(w, x, |i| grid.at(y, i));
            let gy = derivative(h, y, |j| grid.at(j, x));
            out.push(gx.hypot(gy));
        }
    }
    Ok(out)
}

pub fn gradient_stats(grid: &FieldGrid) -> Result<GradientStats> {
    let g = gradient_magnitude(grid)?;
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in &g {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (skewness, kurtosis) = if m2 < MOMENT_VAR_FLOOR {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let mut sorted = g;
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0
    };
    Ok(GradientStats {
        mean,
        std: m2.sqrt(),
        median,
        min: sorted[0],
        max: sorted[k - 1],
        skewness,
        kurtosis,
    })
}

/// Half-sample symmetric reflection of `i` into `0..n`.
fn mirror(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let r = i % period;
    if r < n {
        r
    } else {
        period - 1 - r
    }
}

/// Result of a multi-level 2-D Haar transform.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarDecomposition {
    /// Detail energy (LH + HL + HH) per level, finest first.
    pub detail_energy: Vec<f64>,
    /// Energy of the coarsest approximation band.
    pub approx_energy: f64,
    /// Energy of the padded input grid.
    pub total_energy: f64,
}

/// Orthonormal Haar decomposition after mirror padding each side to a
/// multiple of `2^levels`.
pub fn haar_decompose(grid: &FieldGrid, levels: usize) -> Result<HaarDecomposition> {
    if levels < 1 {
        return Err(Error::config("wavelet levels must be at least 1"));
    }
    let block = 1usize
        .checked_shl(levels as u32)
        .filter(|b| *b <= 1 << 20)
        .ok_or_else(|| Error::config(format!("{levels} wavelet levels is too many")))?;
    let ph = grid.height.div_ceil(block) * block;
    let pw = grid.width.div_ceil(block) * block;
    let mut a: Vec<f64> = (0..ph)
        .flat_map(|y| (0..pw).map(move |x| (y, x)))
        .map(|(y, x)| grid.at(mirror(y, grid.height), mirror(x, grid.width)))
        .collect();
    let total_energy = a.iter().map(|v| v * v).sum();

    let (mut h, mut w) = (ph, pw);
    let mut detail_energy = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (h2, w2) = (h / 2, w / 2);
        let mut next = vec![0.0; h2 * w2];
        let mut energy = 0.0;
        for y in 0..h2 {
            for x in 0..w2 {
                let p = a[2 * y * w + 2 * x];
                let q = a[2 * y * w + 2 * x + 1];
                let r = a[(2 * y + 1) * w + 2 * x];
                let s = a[(2 * y + 1) * w + 2 * x + 1];
                next[y * w2 + x] = (p + q + r + s) / 2.0;
                let lh = (p - q + r - s) / 2.0;
                let hl = (p + q - r - s) / 2.0;
                let hh = (p - q - r + s) / 2.0;
                energy += lh * lh + hl * hl + hh * hh;
            }
        }
        detail_energy.push(energy);
        a = next;
        h = h2;
        w = w2;
    }
    Ok(HaarDecomposition {
        detail_energy,
        approx_energy: a.iter().map(|v| v * v).sum(),
        total_energy,
    })
}

/// Detail energy per level, finest first.
pub fn haar_energies(grid: &FieldGrid, levels: usize) -> Result<Vec<f64>> {
    Ok(haar_decompose(grid, levels)?.detail_energy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxFeatures {
    pub unsigned: f64,
    pub signed: f64,
    pub negative: f64,
    pub positive: f64,
}

impl FluxFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.unsigned, self.signed, self.negative, self.positive]
    }
}

/// Pixel sums of the field; `signed` is defined as `positive + negative`.
pub fn flux_features(grid: &FieldGrid) -> FluxFeatures {
    let positive: f64 = grid.values.iter().map(|v| v.max(0.0)).sum();
    let negative: f64 = grid.values.iter().map(|v| v.min(0.0)).sum();
    FluxFeatures {
        unsigned: grid.values.iter().map(|v| v.abs()).sum(),
        signed: positive + negative,
        negative,
        positive,
    }
}

pub const SHARP_NAMES: [&str; 8] = [
    "TOTUSJZ", "TOTUSJH", "TOTPOT", "ABSNJZH", "SAVNCPP", "USFLUX", "MEANPOT", "SHRGT45",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SharpSums {
    pub TOTUSJZ: f64,
    pub TOTUSJH: f64,
    pub TOTPOT: f64,
    pub ABSNJZH: f64,
    pub SAVNCPP: f64,
    pub USFLUX: f64,
    pub MEANPOT: f64,
    pub SHRGT45: f64,
}

impl SharpSums {
    /// Values in `SHARP_NAMES` order.
    pub fn to_array(self) -> [f64; 8] {
        [
            self.TOTUSJZ,
            self.TOTUSJH,
            self.TOTPOT,
            self.ABSNJZH,
            self.SAVNCPP,
            self.USFLUX,
            self.MEANPOT,
            self.SHRGT45,
        ]
    }
}

/// SHARP summation parameters with all proportionality constants equal to 1.
pub fn sharp_sums(maps: &VectorFieldMaps) -> SharpSums {
    let da = maps.bz.pixel_area;
    let n = maps.bz.len() as f64;
    let (bz, jz) = (&maps.bz.values, &maps.jz.values);
    let mut s = SharpSums {
        TOTUSJZ: 0.0,
        TOTUSJH: 0.0,
        TOTPOT: 0.0,
        ABSNJZH: 0.0,
        SAVNCPP: 0.0,
        USFLUX: 0.0,
        MEANPOT: 0.0,
        SHRGT45: 0.0,
    };
    let (mut helicity, mut jz_pos, mut jz_neg, mut free, mut sheared) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for i in 0..bz.len() {
        s.TOTUSJZ += jz[i].abs() * da;
        s.TOTUSJH += (bz[i] * jz[i]).abs();
        helicity += bz[i] * jz[i];
        if bz[i] > 0.0 {
            jz_pos += jz[i] * da;
        } else if bz[i] < 0.0 {
            jz_neg += jz[i] * da;
        }
        s.USFLUX += bz[i].abs() * da;
        let d = maps.b_obs.values[i] - maps.b_pot.values[i];
        free += d * d;
        if maps.shear_deg.values[i] > 45.0 {
            sheared += 1;
        }
    }
    s.ABSNJZH = helicity.abs();
    s.SAVNCPP = jz_pos.abs() + jz_neg.abs();
    s.TOTPOT = free * da;
    s.MEANPOT = free / n;
    s.SHRGT45 = sheared as f64 / n;
    s
}

/// Column names of `frame_features`.
pub fn frame_feature_names() -> Vec<String> {
    let grad = ["GRAD_MEAN", "GRAD_STD", "GRAD_MEDIAN", "GRAD_MIN", "GRAD_MAX", "GRAD_SKEW", "GRAD_KURT"];
    let flux = ["FLUX_UNSIGNED", "FLUX_SIGNED", "FLUX_NEGATIVE", "FLUX_POSITIVE"];
    grad.iter()
        .map(|s| s.to_string())
        .chain((1..=HAAR_LEVELS).map(|l| format!("WAVELET_E{l}")))
        .chain(flux.iter().map(|s| s.to_string()))
        .chain(SHARP_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

/// Gradient, wavelet and flux features of a line-of-sight grid followed by
/// the SHARP sums of the vector maps.
pub fn frame_features(los: &FieldGrid, maps: &VectorFieldMaps) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(24);
    out.extend(gradient_stats(los)?.to_array());
    out.extend(haar_energies(los, HAAR_LEVELS)?);
    out.extend(flux_features(los).to_array());
    out.extend(sharp_sums(maps).to_array());
    Ok(out)
}

/// Reads grids stored back to back: a `H,W,dA` line, then `H` rows of `W`
/// comma-separated values. Blank lines are skipped.
pub fn read_grids<R: BufRead>(reader: R) -> Result<Vec<FieldGrid>> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|l| !matches!(l, Ok((_, s)) if s.trim().is_empty()));
    let bad = |line: usize, msg: String| Error::ingest(None, Some(line), msg);
    let parse = |line: usize, s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(line, format!("invalid number {:?}", s.trim())))
    };
    let mut grids = Vec::new();
    while let Some(header) = lines.next() {
        let (ln, header) = header?;
        let parts: Vec<&str> = header.split(',').collect();
        if parts.len() != 3 {
            return Err(bad(ln, format!("expected grid header H,W,dA, got {header:?}")));
        }
        let dims = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(ln, format!("invalid dimension {s:?}")));
        let (h, w) = (dims(parts[0])?, dims(parts[1])?);
        let da = parse(ln, parts[2])?;
        let mut values = Vec::with_capacity(h * w);
        for _ in 0..h {
            let (rl, row) = lines
                .next()
                .ok_or_else(|| bad(ln, format!("grid declared {h} rows but the input ended")))??;
            let before = values.len();
            for cell in row.split(',') {
                values.push(parse(rl, cell)?);
            }
            if values.len() - before != w {
                return Err(bad(rl, format!("expected {w} values, got {}", values.len() - before)));
            }
        }
        grids.push(FieldGrid::new(h, w, values, da).map_err(|e| bad(ln, e.to_string()))?);
    }
    Ok(grids)
}

pub fn write_grid<W: std::io::Write>(grid: &FieldGrid, mut out: W) -> Result<()> {
    writeln!(out, "{},{},{}", grid.height, grid.width, grid.pixel_area)?;
    for row in grid.values.chunks(grid.width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
