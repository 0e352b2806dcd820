use serde::{Deserialize, Serialize};

/// Hexcone HSV of an 8-bit RGB triple: hue in degrees `[0, 360)`, S and V in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = f64::from(rgb[0]) / 255.0;
    let g = f64::from(rgb[1]) / 255.0;
    let b = f64::from(rgb[2]) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    (if h >= 360.0 { h - 360.0 } else { h }, s, v)
}

/// Inverse of [`rgb_to_hsv`], rounding to the nearest 8-bit value.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let s = s.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Box in HSV space. `h_min > h_max` denotes a range wrapping through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvRange {
    pub h_min: f64,
    pub h_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl HsvRange {
    pub fn validate(&self) -> Result<(), String> {
        let hue_ok = |h: f64| (0.0..=360.0).contains(&h);
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !hue_ok(self.h_min) || !hue_ok(self.h_max) {
            return Err(format!("hue bounds out of [0, 360]: {:?}", self));
        }
        if !(unit(self.s_min) && unit(self.s_max) && unit(self.v_min) && unit(self.v_max)) {
            return Err(format!("saturation/value bounds out of [0, 1]: {:?}", self));
        }
        if self.s_min > self.s_max || self.v_min > self.v_max {
            return Err(format!("empty saturation/value interval: {:?}", self));
        }
        Ok(())
    }

    pub fn contains_hue(&self, h: f64) -> bool {
        if self.h_min <= self.h_max {
            h >= self.h_min && h <= self.h_max
        } else {
            h >= self.h_min || h <= self.h_max
        }
    }

    pub fn contains(&self, h: f64, s: f64, v: f64) -> bool {
        self.contains_hue(h) && s >= self.s_min && s <= self.s_max && v >= self.v_min && v <= self.v_max
    }

    pub fn contains_rgb(&self, rgb: [u8; 3]) -> bool {
        let (h, s, v) = rgb_to_hsv(rgb);
        self.contains(h, s, v)
    }
}
