//! The 4x4 reference grid, its overlapping axis slices and the
//! intersection-over-area containment predicate.
//!
//! Each y-slice spans two grid rows; the far x-slices span one column, the
//! left/right slices two outer columns, and the center slice the two middle
//! columns:
//!
//! ```text
//!  x:  |  far-left |           |           | far-right |
//!      |<------ left -------->|<------- right ------->|
//!      |           |<------ center ------->|           |
//!      0         0.25        0.5         0.75          1
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotations::BBox;
use crate::error::{Error, Result};

/// Default containment threshold for intersection-over-area.
pub const CONTAINMENT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YSlice {
    Top,
    Center,
    Bottom,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XSlice {
    FarLeft,
    Left,
    Center,
    Right,
    FarRight,
    All,
}

impl YSlice {
    /// Enumeration order, also the final tie-break order.
    pub const ALL_VALUES: [YSlice; 4] = [YSlice::Top, YSlice::Center, YSlice::Bottom, YSlice::All];

    pub fn extent(self) -> (f64, f64) {
        match self {
            YSlice::Top => (0.0, 0.5),
            YSlice::Center => (0.25, 0.75),
            YSlice::Bottom => (0.5, 1.0),
            YSlice::All => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            YSlice::Top => "top",
            YSlice::Center => "center",
            YSlice::Bottom => "bottom",
            YSlice::All => "all",
        }
    }
}

impl XSlice {
    pub const ALL_VALUES: [XSlice; 6] = [
        XSlice::FarLeft,
        XSlice::Left,
        XSlice::Center,
        XSlice::Right,
        XSlice::FarRight,
        XSlice::All,
    ];

    pub fn extent(self) -> (f64, f64) {
        match self {
            XSlice::FarLeft => (0.0, 0.25),
            XSlice::Left => (0.0, 0.5),
            XSlice::Center => (0.25, 0.75),
            XSlice::Right => (0.5, 1.0),
            XSlice::FarRight => (0.75, 1.0),
            XSlice::All => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            XSlice::FarLeft => "far-left",
            XSlice::Left => "left",
            XSlice::Center => "center",
            XSlice::Right => "right",
            XSlice::FarRight => "far-right",
            XSlice::All => "all",
        }
    }
}

impl fmt::Display for YSlice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for XSlice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for YSlice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        YSlice::ALL_VALUES
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown y-slice {s:?}")))
    }
}

impl FromStr for XSlice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        XSlice::ALL_VALUES
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown x-slice {s:?}")))
    }
}

pub fn y_extent(s: YSlice) -> (f64, f64) {
    s.extent()
}

pub fn x_extent(s: XSlice) -> (f64, f64) {
    s.extent()
}

/// A constraint region: the product of a y-slice and an x-slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Region {
    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    pub fn as_bbox(&self) -> BBox {
        BBox::new(self.xmin, self.ymin, self.xmax, self.ymax)
    }
}

pub fn constraint_region(y: YSlice, x: XSlice) -> Region {
    let (ymin, ymax) = y.extent();
    let (xmin, xmax) = x.extent();
    Region {
        xmin,
        ymin,
        xmax,
        ymax,
    }
}

/// `area(box ∩ region) / area(box)`.
pub fn intersection_over_area(bbox: &BBox, region: &Region) -> Result<f64> {
    let area = bbox.area();
    if bbox.is_degenerate() || area <= 0.0 {
        return Err(Error::Domain(format!(
            "intersection over area needs a positive-area box, got {bbox:?}"
        )));
    }
    Ok(bbox.intersection_area(&region.as_bbox()) / area)
}

/// `intersection_over_area(box, region) >= threshold`, with no epsilon slack.
pub fn contains(bbox: &BBox, region: &Region, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Domain(format!(
            "containment threshold must lie in (0, 1], got {threshold}"
        )));
    }
    Ok(intersection_over_area(bbox, region)? >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn slice_extents() {
        assert_eq!(y_extent(YSlice::Top), (0.0, 0.5));
        assert_eq!(y_extent(YSlice::Center), (0.25, 0.75));
        assert_eq!(y_extent(YSlice::All), (0.0, 1.0));
        assert_eq!(x_extent(XSlice::FarRight), (0.75, 1.0));
        assert_eq!(x_extent(XSlice::Left), (0.0, 0.5));
        assert_eq!(x_extent(XSlice::All), (0.0, 1.0));
    }

    #[test]
    fn regions() {
        let r = constraint_region(YSlice::Top, XSlice::Right);
        assert_eq!(
            r,
            Region {
                xmin: 0.5,
                ymin: 0.0,
                xmax: 1.0,
                ymax: 0.5
            }
        );
        assert_eq!(r.area(), 0.25);
        assert_eq!(constraint_region(YSlice::All, XSlice::All).area(), 1.0);
        let r = constraint_region(YSlice::Bottom, XSlice::FarLeft);
        assert_eq!((r.xmin, r.ymin, r.xmax, r.ymax), (0.0, 0.5, 0.25, 1.0));
        assert_eq!(r.area(), 0.125);
    }

    #[test]
    fn ioa_cases() {
        let right = constraint_region(YSlice::All, XSlice::Right);
        let inside = BBox::new(0.6, 0.1, 0.9, 0.4);
        assert_eq!(intersection_over_area(&inside, &right).unwrap(), 1.0);
        let half = BBox::new(0.4, 0.0, 0.6, 0.2);
        assert!((intersection_over_area(&half, &right).unwrap() - 0.5).abs() < 1e-12);
        let left = BBox::new(0.0, 0.0, 0.2, 0.2);
        assert_eq!(intersection_over_area(&left, &right).unwrap(), 0.0);
        assert!(intersection_over_area(&BBox::new(0.5, 0.5, 0.5, 0.7), &right).is_err());
    }

    #[test]
    fn containment_threshold_boundary() {
        let right = constraint_region(YSlice::All, XSlice::Right);
        // 9/32 of a 10/32-wide box lies inside: IoA is exactly 0.9
        let exact = BBox::new(0.46875, 0.0, 0.78125, 0.5);
        assert_eq!(intersection_over_area(&exact, &right).unwrap(), 0.9);
        assert!(contains(&exact, &right, 0.9).unwrap());
        // 0.89 = 89/100 of the width
        let below = BBox::new(0.5 - 0.011, 0.0, 0.5 - 0.011 + 0.1, 0.5);
        let ioa = intersection_over_area(&below, &right).unwrap();
        assert!((ioa - 0.89).abs() < 1e-9);
        assert!(!contains(&below, &right, 0.9).unwrap());
        let unit = constraint_region(YSlice::All, XSlice::All);
        assert!(contains(&below, &unit, 0.9).unwrap());
        assert!(contains(&below, &unit, 0.0).is_err());
    }

    #[test]
    fn slice_names_round_trip() {
        for y in YSlice::ALL_VALUES {
            assert_eq!(y.name().parse::<YSlice>().unwrap(), y);
            assert_eq!(serde_json::to_string(&y).unwrap(), format!("\"{}\"", y.name()));
        }
        for x in XSlice::ALL_VALUES {
            assert_eq!(x.name().parse::<XSlice>().unwrap(), x);
            assert_eq!(serde_json::to_string(&x).unwrap(), format!("\"{}\"", x.name()));
        }
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..0.95f64, 0.0..0.95f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x, y, w, h)| {
            BBox::new(x, y, (x + w * (1.0 - x)).max(x + 1e-3), (y + h * (1.0 - y)).max(y + 1e-3))
        })
    }

    proptest! {
        #[test]
        fn unit_square_contains_everything(b in arb_box()) {
            let unit = constraint_region(YSlice::All, XSlice::All);
            prop_assert_eq!(intersection_over_area(&b, &unit).unwrap(), 1.0);
        }

        #[test]
        fn slice_nesting(b in arb_box(), t in 0.05..1.0f64) {
            let far = constraint_region(YSlice::Top, XSlice::FarRight);
            let right = constraint_region(YSlice::Top, XSlice::Right);
            let unit = constraint_region(YSlice::All, XSlice::All);
            if contains(&b, &far, t).unwrap() {
                prop_assert!(contains(&b, &right, t).unwrap());
                prop_assert!(contains(&b, &unit, t).unwrap());
            }
        }

        #[test]
        fn ioa_monotone_in_region(b in arb_box(), y in 0usize..4, x in 0usize..6) {
            let ys = YSlice::ALL_VALUES[y];
            let xs = XSlice::ALL_VALUES[x];
            let small = intersection_over_area(&b, &constraint_region(ys, xs)).unwrap();
            let wider_x = intersection_over_area(&b, &constraint_region(ys, XSlice::All)).unwrap();
            let wider_y = intersection_over_area(&b, &constraint_region(YSlice::All, xs)).unwrap();
            prop_assert!(wider_x >= small && wider_y >= small);
            prop_assert!((0.0..=1.0).contains(&small));
        }
    }
}
