//! Global device registry arranged as a forest.
//!
//! Every device has a globally unique tag. Controllers keep a local registry
//! of their children; a failure marks the whole subtree below it as suspect.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Device,
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceStatus {
    Ok,
    Suspect,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceNode {
    pub tag: String,
    pub kind: DeviceKind,
    pub parent: Option<String>,
    pub children: Vec<String>,
    pub status: DeviceStatus,
}

/// Serialized form of a node: `{tag, kind, parent}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub tag: String,
    pub kind: DeviceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceTree {
    nodes: BTreeMap<String, DeviceNode>,
    roots: Vec<String>,
    // registration order, for stable serialization
    order: Vec<String>,
}

impl DeviceTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a tree from specs in order; parents must precede children.
    pub fn from_specs(specs: &[DeviceSpec]) -> Result<Self> {
        let mut tree = Self::new();
        for s in specs {
            tree.register(&s.tag, s.kind, s.parent.as_deref())?;
        }
        Ok(tree)
    }

    pub fn to_specs(&self) -> Vec<DeviceSpec> {
        self.order
            .iter()
            .map(|tag| {
                let n = &self.nodes[tag];
                DeviceSpec {
                    tag: n.tag.clone(),
                    kind: n.kind,
                    parent: n.parent.clone(),
                }
            })
            .collect()
    }

    pub fn register(&mut self, tag: &str, kind: DeviceKind, parent: Option<&str>) -> Result<()> {
        if self.nodes.contains_key(tag) {
            return Err(Error::DuplicateTag(tag.to_string()));
        }
        let mut status = DeviceStatus::Ok;
        if let Some(p) = parent {
            let pn = self
                .nodes
                .get_mut(p)
                .ok_or_else(|| Error::Structure(alloc::format!("parent `{p}` does not exist")))?;
            if pn.kind != DeviceKind::Controller {
                return Err(Error::Structure(alloc::format!(
                    "parent `{p}` is not a controller"
                )));
            }
            pn.children.push(tag.to_string());
            // a child of a broken subtree is suspect from the start
            if pn.status != DeviceStatus::Ok {
                status = DeviceStatus::Suspect;
            }
        } else {
            self.roots.push(tag.to_string());
        }
        self.nodes.insert(
            tag.to_string(),
            DeviceNode {
                tag: tag.to_string(),
                kind,
                parent: parent.map(ToString::to_string),
                children: Vec::new(),
                status,
            },
        );
        self.order.push(tag.to_string());
        Ok(())
    }

    pub fn get(&self, tag: &str) -> Option<&DeviceNode> {
        self.nodes.get(tag)
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DeviceNode> {
        self.order.iter().map(|t| &self.nodes[t])
    }

    pub fn status(&self, tag: &str) -> Result<DeviceStatus> {
        self.lookup(tag).map(|n| n.status)
    }

    /// Tags from the root down to `tag`, inclusive.
    pub fn dependency_path(&self, tag: &str) -> Result<Vec<String>> {
        let mut node = self.lookup(tag)?;
        let mut path = vec![node.tag.clone()];
        while let Some(p) = &node.parent {
            node = &self.nodes[p];
            path.push(node.tag.clone());
        }
        path.reverse();
        Ok(path)
    }

    /// Marks `tag` failed and every non-failed descendant suspect.
    pub fn mark_failed(&mut self, tag: &str) -> Result<()> {
        self.lookup(tag)?;
        let mut stack = vec![tag.to_string()];
        let mut first = true;
        while let Some(t) = stack.pop() {
            let n = self.nodes.get_mut(&t).expect("children are registered");
            if first {
                n.status = DeviceStatus::Failed;
                first = false;
            } else if n.status != DeviceStatus::Failed {
                n.status = DeviceStatus::Suspect;
            }
            stack.extend(n.children.iter().cloned());
        }
        Ok(())
    }

    fn lookup(&self, tag: &str) -> Result<&DeviceNode> {
        self.nodes
            .get(tag)
            .ok_or_else(|| Error::UnknownTag(tag.to_string()))
    }
}
