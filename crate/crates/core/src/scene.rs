//! Per-frame scene graphs with vocabulary indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[x1, y1, x2, y2]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox([x1, y1, x2, y2])
    }

    pub fn x1(&self) -> f64 {
        self.0[0]
    }
    pub fn y1(&self) -> f64 {
        self.0[1]
    }
    pub fn x2(&self) -> f64 {
        self.0[2]
    }
    pub fn y2(&self) -> f64 {
        self.0[3]
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.x2() > self.x1() && self.y2() > self.y1()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("degenerate box {:?}", self.0)))
        }
    }

    pub fn area(&self) -> f64 {
        (self.x2() - self.x1()) * (self.y2() - self.y1())
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox([
            self.x1().min(other.x1()),
            self.y1().min(other.y1()),
            self.x2().max(other.x2()),
            self.y2().max(other.y2()),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    pub class: usize,
    pub bbox: BBox,
    pub score: Option<f64>,
    pub class_scores: Option<Vec<f64>>,
}

impl Entity {
    pub fn new(id: u32, class: usize, bbox: BBox) -> Self {
        Entity {
            id,
            class,
            bbox,
            score: None,
            class_scores: None,
        }
    }
}

/// `<subject, predicate, object>` triplet between two entity ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: u32,
    pub object: u32,
    pub predicate: usize,
    /// Confidence; ground truth carries 1.0.
    pub score: f64,
}

impl Relation {
    pub fn new(subject: u32, object: u32, predicate: usize, score: f64) -> Self {
        Relation {
            subject,
            object,
            predicate,
            score,
        }
    }

    pub fn pair(&self) -> (u32, u32) {
        (self.subject, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphFrame {
    pub video: String,
    pub frame: u64,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

impl SceneGraphFrame {
    pub fn new(video: impl Into<String>, frame: u64) -> Self {
        SceneGraphFrame {
            video: video.into(),
            frame,
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn key(&self) -> (String, u64) {
        (self.video.clone(), self.frame)
    }

    pub fn entity(&self, id: u32) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }
}
