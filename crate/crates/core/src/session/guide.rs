use serde::{Deserialize, Serialize};

use crate::content::{with_article, Exhibit};

pub const GUIDE_ID: &str = "guide";
pub const GUIDE_LABEL: &str = "Guide";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrationSegment {
    pub viewpoint_ref: String,
    pub text: String,
}

/// Guide narration for the BASE condition: one segment per viewpoint, in
/// pack order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideScript {
    pub exhibit_ref: String,
    pub segments: Vec<NarrationSegment>,
}

impl GuideScript {
    pub fn derive(exhibit: &Exhibit) -> Self {
        let n = exhibit.viewpoints.len();
        let segments = exhibit
            .viewpoints
            .iter()
            .enumerate()
            .map(|(i, vp)| {
                let lead = match i {
                    0 => format!(
                        "Welcome to \"{}\". People look at this work in {n} quite different ways. First, the view of {}:",
                        exhibit.title,
                        with_article(&vp.identity_label)
                    ),
                    _ if i + 1 == n => format!("Finally, {} would say:", with_article(&vp.identity_label)),
                    _ => format!("Next, the view of {}:", with_article(&vp.identity_label)),
                };
                NarrationSegment { viewpoint_ref: vp.id.clone(), text: format!("{lead} {}", vp.summary) }
            })
            .collect();
        Self { exhibit_ref: exhibit.id.clone(), segments }
    }

    pub fn viewpoint_order(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.viewpoint_ref.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::{fixtures, ContentPack};

    #[test]
    fn lion_narration_has_three_ordered_segments() {
        let pack = ContentPack::from_json(fixtures::LION).unwrap();
        let ex = pack.exhibit("lion-dromedary").unwrap();
        let g = GuideScript::derive(ex);
        assert_eq!(g.viewpoint_order(), vec!["lion-aesthetics", "lion-ethics", "lion-biology"]);
        for (seg, vp) in g.segments.iter().zip(&ex.viewpoints) {
            assert!(seg.text.contains(&vp.summary));
        }
    }
}
