use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calibration::{Intrinsics, SimilarityTransform};

pub const FRAME_WIDTH: usize = 640;
pub const FRAME_HEIGHT: usize = 480;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub intrinsics: Intrinsics,
    /// Optical centre in the stage frame, mm.
    pub position: [f64; 3],
    /// Rotation of the image x axis about the (downward) optical axis, degrees.
    pub yaw_deg: f64,
    /// Half-width of the uniform per-pixel depth noise, mm.
    pub depth_noise: f64,
    /// Reported depth units per mm. Anything other than 1 shows up as the
    /// scale of the camera-to-stage transform.
    pub depth_scale: f64,
    pub bed_color: [u8; 3],
    pub laser_color: [u8; 3],
    /// Flat-top radius of the painted laser spot, pixels.
    pub laser_radius: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics {
                fx: 615.0,
                fy: 615.0,
                cx: 320.0,
                cy: 240.0,
            },
            position: [100.0, 100.0, 450.0],
            yaw_deg: 183.0,
            depth_noise: 1.0,
            depth_scale: 1.0,
            bed_color: [235, 235, 228],
            laser_color: [30, 255, 30],
            laser_radius: 2,
        }
    }
}

/// Down-looking pinhole camera with a known pose in the stage frame.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// Rows are the camera axes expressed in the stage frame.
    rotation: Matrix3<f64>,
    position: Vector3<f64>,
    depth_scale: f64,
}

impl CameraModel {
    pub fn new(cfg: &CameraConfig) -> Self {
        let psi = cfg.yaw_deg.to_radians();
        let (s, c) = psi.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c,   s,   0.0,
            s,   -c,  0.0,
            0.0, 0.0, -1.0,
        );
        Self {
            intrinsics: cfg.intrinsics,
            rotation,
            position: Vector3::from(cfg.position),
            depth_scale: cfg.depth_scale,
        }
    }

    pub fn to_camera(&self, p_stage: [f64; 3]) -> Vector3<f64> {
        self.rotation * (Vector3::from(p_stage) - self.position)
    }

    /// Pixel coordinates and metric z-depth of a stage point, or `None`
    /// behind the camera.
    pub fn project(&self, p_stage: [f64; 3]) -> Option<(f64, f64, f64)> {
        let p = self.to_camera(p_stage);
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
    }

    /// Where the ray through pixel `(u, v)` meets the plane `z = height`.
    pub fn ray_hit(&self, u: f64, v: f64, height: f64) -> Option<([f64; 2], f64)> {
        let k = &self.intrinsics;
        let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = self.rotation.transpose() * dir_cam;
        if dir.z >= 0.0 {
            return None;
        }
        // dir_cam.z == 1, so the ray parameter is the z-depth itself.
        let lambda = (height - self.position.z) / dir.z;
        if lambda <= 0.0 {
            return None;
        }
        let hit = self.position + dir * lambda;
        Some(([hit.x, hit.y], lambda))
    }

    pub fn depth_scale(&self) -> f64 {
        self.depth_scale
    }

    /// Ground-truth camera-to-stage transform for points deprojected from
    /// this camera's (scaled) depth readings.
    pub fn camera_to_stage(&self) -> SimilarityTransform {
        SimilarityTransform::new(1.0 / self.depth_scale, self.rotation.transpose(), self.position)
            .expect("camera rotation is orthonormal")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    /// Interleaved 8-bit RGB, row-major.
    pub rgb: Vec<u8>,
    /// Depth in (scaled) mm, 0 where invalid.
    pub depth: Vec<f32>,
    pub intrinsics: Intrinsics,
    pub timestamp_ns: u64,
}

impl CameraFrame {
    pub fn blank(intrinsics: Intrinsics) -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            rgb: vec![0; FRAME_WIDTH * FRAME_HEIGHT * 3],
            depth: vec![0.0; FRAME_WIDTH * FRAME_HEIGHT],
            intrinsics,
            timestamp_ns: 0,
        }
    }

    pub fn rgb_at(&self, u: usize, v: usize) -> [u8; 3] {
        let i = (v * self.width + u) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_rgb(&mut self, u: usize, v: usize, c: [u8; 3]) {
        let i = (v * self.width + u) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// Depth at the pixel nearest `(u, v)`; `None` outside the image or
    /// where the sensor reported no return.
    pub fn depth_at(&self, u: f64, v: f64) -> Option<f64> {
        let (ur, vr) = (u.round(), v.round());
        if !(ur >= 0.0 && vr >= 0.0) {
            return None;
        }
        let (ui, vi) = (ur as usize, vr as usize);
        if ui >= self.width || vi >= self.height {
            return None;
        }
        let d = self.depth[vi * self.width + ui];
        (d > 0.0).then_some(d as f64)
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        image::save_buffer(
            path,
            &self.rgb,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
    }

    /// Binary 16-bit PGM of the depth map in whole millimetres.
    pub fn write_depth_pgm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.depth.len() * 2);
        for &d in &self.depth {
            let mm = d.round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&mm.to_be_bytes());
        }
        w.write_all(&buf)
    }
}
