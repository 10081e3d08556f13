use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Upper end of the mean shadowing range in dB.
pub const MAX_SHADOW_MEAN_DB: f64 = 10.0;

/// Spatially smooth shadowing field.
///
/// Node `(i, j)` of the `G x G` grid sits at `(i * area / (G - 1), j * area / (G - 1))`;
/// the mean at any point is the bilinear interpolation of the four surrounding
/// nodes. Draws are Gaussian around that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingMap {
    grid_size: usize,
    area: f64,
    /// Row-major by `j` (y) then `i` (x).
    grid_means: Vec<f64>,
    noise_std: f64,
    seed: u64,
}

impl ShadowingMap {
    /// Uniform means in `[0, 10]` dB smoothed by one 3x3 box blur.
    pub fn build(seed: u64, grid_size: usize, area: f64, noise_std: f64) -> Self {
        assert!(grid_size >= 2, "shadowing grid needs at least 2x2 nodes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid_size;
        let raw: Vec<f64> = (0..g * g)
            .map(|_| rng.random_range(0.0..=MAX_SHADOW_MEAN_DB))
            .collect();
        let mut grid_means = vec![0.0; g * g];
        for j in 0..g {
            for i in 0..g {
                let (mut sum, mut n) = (0.0, 0usize);
                for jj in j.saturating_sub(1)..=(j + 1).min(g - 1) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(g - 1) {
                        sum += raw[jj * g + ii];
                        n += 1;
                    }
                }
                grid_means[j * g + i] = sum / n as f64;
            }
        }
        Self {
            grid_size,
            area,
            grid_means,
            noise_std,
            seed,
        }
    }

    pub fn from_grid(grid_size: usize, area: f64, grid_means: Vec<f64>, noise_std: f64) -> Self {
        assert_eq!(grid_means.len(), grid_size * grid_size);
        Self {
            grid_size,
            area,
            grid_means,
            noise_std,
            seed: 0,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn grid_means(&self) -> &[f64] {
        &self.grid_means
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        let step = self.area / (self.grid_size - 1) as f64;
        [i as f64 * step, j as f64 * step]
    }

    pub fn node_mean(&self, i: usize, j: usize) -> f64 {
        self.grid_means[j * self.grid_size + i]
    }

    /// Bilinear interpolation of the grid means; positions are clamped to the area.
    pub fn mean_at(&self, pos: [f64; 2]) -> f64 {
        let cells = (self.grid_size - 1) as f64;
        let u = (pos[0] / self.area).clamp(0.0, 1.0) * cells;
        let v = (pos[1] / self.area).clamp(0.0, 1.0) * cells;
        let i0 = (u.floor() as usize).min(self.grid_size - 2);
        let j0 = (v.floor() as usize).min(self.grid_size - 2);
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let m00 = self.node_mean(i0, j0);
        let m10 = self.node_mean(i0 + 1, j0);
        let m01 = self.node_mean(i0, j0 + 1);
        let m11 = self.node_mean(i0 + 1, j0 + 1);
        (1.0 - fu) * (1.0 - fv) * m00 + fu * (1.0 - fv) * m10 + (1.0 - fu) * fv * m01 + fu * fv * m11
    }

    pub fn sample<R: Rng + ?Sized>(&self, pos: [f64; 2], rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean_at(pos) + self.noise_std * z
    }
}
