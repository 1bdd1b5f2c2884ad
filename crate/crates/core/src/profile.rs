//! One-dimensional sampled profiles (line cuts and oracle curves).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Number density, 1/m^3.
    Density,
    /// Temperature, K.
    Temperature,
    /// Electric potential, V.
    Potential,
}

impl Quantity {
    pub fn unit(self) -> &'static str {
        match self {
            Quantity::Density => "1/m^3",
            Quantity::Temperature => "K",
            Quantity::Potential => "V",
        }
    }
}

/// Ordered `(coordinate in m, value)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile1D {
    points: Vec<(f64, f64)>,
    quantity: Quantity,
}

impl Profile1D {
    /// Builds a profile, sorting by coordinate and dropping exact duplicates.
    pub fn new(mut points: Vec<(f64, f64)>, quantity: Quantity) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.dedup_by(|a, b| a.0 == b.0);
        Profile1D { points, quantity }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coordinates(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn interpolate(&self, x: f64) -> Option<f64> {
        let p = &self.points;
        let (first, last) = (p.first()?, p.last()?);
        if x < first.0 || x > last.0 {
            return None;
        }
        let k = p.partition_point(|q| q.0 < x);
        if k == 0 {
            return Some(first.1);
        }
        let (a, b) = (p[k - 1], p[k.min(p.len() - 1)]);
        if b.0 == a.0 {
            return Some(b.1);
        }
        let s = (x - a.0) / (b.0 - a.0);
        Some(a.1 + s * (b.1 - a.1))
    }

    /// Coordinate of the largest value.
    pub fn argmax(&self) -> Option<f64> {
        self.points.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|p| p.0)
    }

    /// Trapezoid integral over the sampled range.
    pub fn integral(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }
}
