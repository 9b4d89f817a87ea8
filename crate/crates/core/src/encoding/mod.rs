//! Input encoding: Poisson rate coding for frames, time binning for event
//! streams, and the binary containers both arrive in.

mod events;
mod idx;

pub use events::{
    bin_events, parse_atis, parse_event_file, synth_event_stream, write_event_file, EventRecord, EventStream,
};
pub use idx::{load_idx_file, load_mnist_split, parse_idx, IdxTensor, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use rand::Rng;

use crate::error::{Error, Result};

/// A grayscale frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImage {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
    label: usize,
}

impl FrameImage {
    pub fn new(pixels: Vec<f32>, height: usize, width: usize, label: usize) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!("{} pixels for a {height}x{width} frame", pixels.len())));
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::PixelOutOfRange { index, value });
        }
        Ok(Self { pixels, height, width, label })
    }

    /// Builds a frame from raw 8-bit intensities, scaled by 1/255.
    pub fn from_bytes(bytes: &[u8], height: usize, width: usize, label: usize) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::new(pixels, height, width, label)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Binary spike activity laid out as `(timestep, batch, unit)`, row-major.
///
/// A single sample is a tensor with `batch == 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    timesteps: usize,
    batch: usize,
    units: usize,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(timesteps: usize, batch: usize, units: usize) -> Self {
        Self { timesteps, batch, units, data: vec![0; timesteps * batch * units] }
    }

    /// Wraps `data`, rejecting entries other than 0 and 1.
    pub fn from_vec(timesteps: usize, batch: usize, units: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != timesteps * batch * units {
            return Err(Error::Shape(format!("{} entries for shape ({timesteps}, {batch}, {units})", data.len())));
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinarySpike { index, value });
        }
        Ok(Self { timesteps, batch, units, data })
    }

    /// Stacks single-sample tensors of identical shape along the batch axis.
    pub fn stack(samples: &[&SpikeTensor]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidArgument("cannot stack zero samples".into()))?;
        let (t_len, n) = (first.timesteps, first.units);
        let b_total: usize = samples.iter().map(|s| s.batch).sum();
        let mut out = Self::zeros(t_len, b_total, n);
        let mut b_off = 0;
        for s in samples {
            if s.timesteps != t_len || s.units != n {
                return Err(Error::Shape(format!(
                    "cannot stack ({}, _, {}) onto ({t_len}, _, {n})",
                    s.timesteps, s.units
                )));
            }
            for t in 0..t_len {
                for b in 0..s.batch {
                    out.row_mut(t, b_off + b).copy_from_slice(s.row(t, b));
                }
            }
            b_off += s.batch;
        }
        Ok(out)
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, t: usize, b: usize, unit: usize) -> u8 {
        self.data[(t * self.batch + b) * self.units + unit]
    }

    pub fn set(&mut self, t: usize, b: usize, unit: usize, spike: bool) {
        self.data[(t * self.batch + b) * self.units + unit] = u8::from(spike);
    }

    pub fn row(&self, t: usize, b: usize) -> &[u8] {
        let start = (t * self.batch + b) * self.units;
        &self.data[start..start + self.units]
    }

    fn row_mut(&mut self, t: usize, b: usize) -> &mut [u8] {
        let start = (t * self.batch + b) * self.units;
        &mut self.data[start..start + self.units]
    }

    /// Indices of the units that fired at `(t, b)`.
    pub fn active(&self, t: usize, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(t, b).iter().enumerate().filter_map(|(i, &s)| (s != 0).then_some(i))
    }

    pub fn count(&self) -> u64 {
        self.data.iter().map(|&s| u64::from(s)).sum()
    }

    /// Extracts batch element `b` as a single-sample tensor.
    pub fn sample(&self, b: usize) -> SpikeTensor {
        let mut out = Self::zeros(self.timesteps, 1, self.units);
        for t in 0..self.timesteps {
            out.row_mut(t, 0).copy_from_slice(self.row(t, b));
        }
        out
    }
}

/// Rate-codes a frame as `T` independent Bernoulli draws per pixel, with the
/// pixel intensity as firing probability. Output shape is `(T, 1, H*W)`.
pub fn poisson_encode<R: Rng + ?Sized>(image: &FrameImage, timesteps: usize, rng: &mut R) -> Result<SpikeTensor> {
    if timesteps == 0 {
        return Err(Error::InvalidArgument("timesteps must be at least 1".into()));
    }
    if let Some((index, &value)) = image.pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::PixelOutOfRange { index, value });
    }
    let n = image.len();
    let mut data = Vec::with_capacity(timesteps * n);
    for _ in 0..timesteps {
        data.extend(image.pixels.iter().map(|&p| u8::from(rng.random::<f32>() < p)));
    }
    Ok(SpikeTensor { timesteps, batch: 1, units: n, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(value: f32, n: usize) -> FrameImage {
        FrameImage::new(vec![value; n], 1, n, 0).unwrap()
    }

    #[test]
    fn zero_image_never_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = poisson_encode(&flat(0.0, 16), 50, &mut rng).unwrap();
        assert_eq!(s.count(), 0);
        assert_eq!((s.timesteps(), s.batch(), s.units()), (50, 1, 16));
    }

    #[test]
    fn unit_image_always_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = poisson_encode(&flat(1.0, 16), 50, &mut rng).unwrap();
        assert_eq!(s.count(), 50 * 16);
    }

    #[test]
    fn half_intensity_rate() {
        // 4 sigma of Binomial(10000, 0.5) / 10000 is 0.02.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = poisson_encode(&flat(0.5, 1), 10_000, &mut rng).unwrap();
        let frac = s.count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn same_seed_same_train() {
        let img = FrameImage::new((0..16).map(|i| i as f32 / 16.0).collect(), 4, 4, 3).unwrap();
        let a = poisson_encode(&img, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = poisson_encode(&img, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_pixels_and_zero_steps() {
        assert!(matches!(FrameImage::new(vec![0.2, 1.5], 1, 2, 0), Err(Error::PixelOutOfRange { index: 1, .. })));
        assert!(FrameImage::new(vec![f32::NAN], 1, 1, 0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(poisson_encode(&flat(0.3, 4), 0, &mut rng).is_err());
    }

    #[test]
    fn per_pixel_rate_tracks_intensity() {
        let vals: Vec<f32> = vec![0.05, 0.25, 0.5, 0.8, 0.95];
        let img = FrameImage::new(vals.clone(), 1, 5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t_len = 20_000;
        let s = poisson_encode(&img, t_len, &mut rng).unwrap();
        for (i, &p) in vals.iter().enumerate() {
            let hits: u32 = (0..t_len).map(|t| u32::from(s.get(t, 0, i))).sum();
            let frac = f64::from(hits) / t_len as f64;
            let sigma = (f64::from(p) * (1.0 - f64::from(p)) / t_len as f64).sqrt();
            assert!((frac - f64::from(p)).abs() < 4.0 * sigma, "pixel {i}: {frac} vs {p}");
        }
    }

    #[test]
    fn stack_and_sample_invert() {
        let mut a = SpikeTensor::zeros(3, 1, 4);
        a.set(1, 0, 2, true);
        let mut b = SpikeTensor::zeros(3, 1, 4);
        b.set(2, 0, 0, true);
        let s = SpikeTensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.batch(), 2);
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
        assert_eq!(s.active(2, 1).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn from_vec_rejects_non_binary() {
        assert!(matches!(
            SpikeTensor::from_vec(1, 1, 3, vec![0, 2, 1]),
            Err(Error::NonBinarySpike { index: 1, value: 2 })
        ));
    }
}
