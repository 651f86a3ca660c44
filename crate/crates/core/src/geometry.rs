//! Pixel lifting, point-set statistics, and 2D box algebra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox2D, CameraModel, PixelMask};
use crate::scalar::{Point3, Scalar};

/// Dense row-major depth map in meters. `0` or non-finite marks invalid depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DepthImage<T: Scalar> {
    width: u32,
    height: u32,
    values: Vec<T>,
}

impl<T: Scalar> DepthImage<T> {
    pub fn new(width: u32, height: u32, values: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("depth image must have positive dimensions"));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "depth image {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// All-invalid image of the given size.
    pub fn blank(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![T::zero(); width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height
    }

    pub fn get(&self, u: u32, v: u32) -> Option<T> {
        self.contains(u, v)
            .then(|| self.values[v as usize * self.width as usize + u as usize])
    }

    pub fn set(&mut self, u: u32, v: u32, depth: T) {
        if self.contains(u, v) {
            self.values[v as usize * self.width as usize + u as usize] = depth;
        }
    }

    /// Depth at `(u, v)` if it is a usable measurement.
    pub fn valid_depth(&self, u: u32, v: u32) -> Option<T> {
        self.get(u, v).filter(|d| d.is_finite() && *d > T::zero())
    }
}

fn mat_vec<T: Scalar>(m: &[[T; 3]; 3], x: &Point3<T>) -> Point3<T> {
    [
        m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
        m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
        m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
    ]
}

fn mat_t_vec<T: Scalar>(m: &[[T; 3]; 3], x: &Point3<T>) -> Point3<T> {
    [
        m[0][0] * x[0] + m[1][0] * x[1] + m[2][0] * x[2],
        m[0][1] * x[0] + m[1][1] * x[1] + m[2][1] * x[2],
        m[0][2] * x[0] + m[1][2] * x[1] + m[2][2] * x[2],
    ]
}

/// Back-projects pixel `(u, v)` at `depth` into the camera frame.
pub fn lift_pixel_camera<T: Scalar>(u: T, v: T, depth: T, camera: &CameraModel<T>) -> Result<Point3<T>> {
    if !(depth.is_finite() && depth > T::zero()) {
        return Err(Error::invalid(format!("invalid depth {depth}")));
    }
    Ok([
        depth * (u - camera.cx) / camera.fx,
        depth * (v - camera.cy) / camera.fy,
        depth,
    ])
}

/// Back-projects pixel `(u, v)` at `depth` and maps the result into the world frame.
pub fn lift_pixel<T: Scalar>(u: T, v: T, depth: T, camera: &CameraModel<T>) -> Result<Point3<T>> {
    let xc = lift_pixel_camera(u, v, depth, camera)?;
    Ok(camera_to_world(&xc, camera))
}

pub fn camera_to_world<T: Scalar>(xc: &Point3<T>, camera: &CameraModel<T>) -> Point3<T> {
    let r = mat_vec(&camera.rotation, xc);
    [
        r[0] + camera.translation[0],
        r[1] + camera.translation[1],
        r[2] + camera.translation[2],
    ]
}

pub fn world_to_camera<T: Scalar>(xw: &Point3<T>, camera: &CameraModel<T>) -> Point3<T> {
    let d = [
        xw[0] - camera.translation[0],
        xw[1] - camera.translation[1],
        xw[2] - camera.translation[2],
    ];
    mat_t_vec(&camera.rotation, &d)
}

/// Projects a world point to pixel coordinates, `None` when behind the camera.
pub fn project_point<T: Scalar>(xw: &Point3<T>, camera: &CameraModel<T>) -> Option<(T, T)> {
    let xc = world_to_camera(xw, camera);
    if !(xc[2] > T::zero()) {
        return None;
    }
    Some((
        camera.fx * xc[0] / xc[2] + camera.cx,
        camera.fy * xc[1] / xc[2] + camera.cy,
    ))
}

/// Lifts every mask pixel with valid depth; pixels without depth are skipped.
pub fn lift_mask<T: Scalar>(
    depth: &DepthImage<T>,
    mask: &PixelMask,
    camera: &CameraModel<T>,
) -> Result<Vec<Point3<T>>> {
    let mut points = Vec::with_capacity(mask.len());
    for &(u, v) in mask.pixels() {
        if !depth.contains(u, v) {
            return Err(Error::invalid(format!(
                "mask pixel ({u}, {v}) outside {}x{} image",
                depth.width(),
                depth.height()
            )));
        }
        if let Some(d) = depth.valid_depth(u, v) {
            let uu = T::from_u32(u).unwrap_or_else(T::nan);
            let vv = T::from_u32(v).unwrap_or_else(T::nan);
            points.push(lift_pixel(uu, vv, d, camera)?);
        }
    }
    Ok(points)
}

/// Arithmetic mean and axis-aligned extent of a non-empty point set.
pub fn centroid_and_size<T: Scalar>(points: &[Point3<T>]) -> Result<(Point3<T>, Point3<T>)> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("centroid of empty point set"))?;
    let mut sum = [T::zero(); 3];
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for k in 0..3 {
            sum[k] = sum[k] + p[k];
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let n = T::from_usize(points.len()).unwrap_or_else(T::nan);
    let mut c = [sum[0] / n, sum[1] / n, sum[2] / n];
    // keep the mean inside the bounds despite rounding
    for k in 0..3 {
        c[k] = c[k].max(lo[k]).min(hi[k]);
    }
    Ok((c, [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]))
}

/// Evenly strided subset of at most `max_points` points, original order kept.
pub fn subsample_uniform<T: Copy>(points: Vec<T>, max_points: usize) -> Vec<T> {
    let n = points.len();
    if max_points == 0 || n <= max_points {
        return points;
    }
    (0..max_points).map(|i| points[i * n / max_points]).collect()
}

impl<T: Scalar> BoundingBox2D<T> {
    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x_min + self.x_max) / two, (self.y_min + self.y_max) / two)
    }

    pub fn diagonal(&self) -> T {
        self.width().hypot(self.height())
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &Self) -> Self {
        Self::new_unchecked(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > T::zero() && h > T::zero() {
            w * h
        } else {
            T::zero()
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        iou(self, other)
    }
}

pub fn iou<T: Scalar>(a: &BoundingBox2D<T>, b: &BoundingBox2D<T>) -> T {
    let inter = a.intersection_area(b);
    if inter == T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

pub fn union_box<T: Scalar>(a: &BoundingBox2D<T>, b: &BoundingBox2D<T>) -> BoundingBox2D<T> {
    a.union(b)
}

pub fn area<T: Scalar>(b: &BoundingBox2D<T>) -> T {
    b.area()
}

pub fn center<T: Scalar>(b: &BoundingBox2D<T>) -> (T, T) {
    b.center()
}

pub fn diagonal<T: Scalar>(b: &BoundingBox2D<T>) -> T {
    b.diagonal()
}
