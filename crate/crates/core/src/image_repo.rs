//! Image catalog with per-hypervisor variants, save-time modeling and a
//! per-cloud transfer cache.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    CloudSite, Duration, Hypervisor, ImageVariant, ModelError, SimTime, UserId, VMImage,
};

/// Seconds needed to save one (started) gigabyte into the repository.
pub const SAVE_SECONDS_PER_GB: u64 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepoError {
    #[error("image {0} already exists")]
    DuplicateId(String),
    #[error("image {0} not found")]
    NotFound(String),
    #[error("image {image} has no {hypervisor} variant")]
    NoVariant {
        image: String,
        hypervisor: Hypervisor,
    },
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    image: VMImage,
    available_at: SimTime,
}

/// One row of `image list`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogRow {
    pub image_id: String,
    pub owner: String,
    pub size_gb: f64,
    pub hypervisors: Vec<Hypervisor>,
    pub available_at: SimTime,
}

#[derive(Debug, Clone, Default)]
pub struct ImageRepo {
    catalog: BTreeMap<String, Entry>,
    /// (image_id, cloud) pairs whose transfer already completed.
    cache: BTreeSet<(String, String)>,
}

/// Save duration for an image of the given size: one minute per started GB.
pub fn save_duration(size_gb: f64) -> Duration {
    // Guard against 9.000000001-style representation noise.
    let whole = (size_gb - 1e-9).ceil().max(1.0) as u64;
    whole * SAVE_SECONDS_PER_GB
}

impl ImageRepo {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an image that becomes visible at `available_at`.
    pub fn register(&mut self, image: VMImage, available_at: SimTime) -> Result<(), RepoError> {
        image.validate()?;
        if self.catalog.contains_key(&image.image_id) {
            return Err(RepoError::DuplicateId(image.image_id));
        }
        self.catalog.insert(
            image.image_id.clone(),
            Entry {
                image,
                available_at,
            },
        );
        Ok(())
    }

    /// Saves an image and returns the time at which lookups start finding it.
    pub fn save_image(
        &mut self,
        owner: UserId,
        image_id: &str,
        size_gb: f64,
        variants: Vec<ImageVariant>,
        now: SimTime,
    ) -> Result<SimTime, RepoError> {
        let image = VMImage {
            image_id: image_id.to_string(),
            owner,
            size_gb,
            variants,
        };
        image.validate()?;
        let ready = now + save_duration(size_gb);
        self.register(image, ready)?;
        Ok(ready)
    }

    pub fn lookup(&self, image_id: &str, now: SimTime) -> Option<&VMImage> {
        self.catalog
            .get(image_id)
            .filter(|e| e.available_at <= now)
            .map(|e| &e.image)
    }

    /// Whether the id is taken, visible or not.
    pub fn contains(&self, image_id: &str) -> bool {
        self.catalog.contains_key(image_id)
    }

    pub fn available_at(&self, image_id: &str) -> Option<SimTime> {
        self.catalog.get(image_id).map(|e| e.available_at)
    }

    pub fn resolve_variant(
        &self,
        image_id: &str,
        hypervisor: Hypervisor,
        now: SimTime,
    ) -> Result<&str, RepoError> {
        let image = self
            .lookup(image_id, now)
            .ok_or_else(|| RepoError::NotFound(image_id.to_string()))?;
        image
            .variant(hypervisor)
            .map(|v| v.location.as_str())
            .ok_or_else(|| RepoError::NoVariant {
                image: image_id.to_string(),
                hypervisor,
            })
    }

    pub fn is_cached(&self, image_id: &str, cloud: &str) -> bool {
        self.cache
            .contains(&(image_id.to_string(), cloud.to_string()))
    }

    /// Seconds needed to move the image to the cloud; zero once cached there.
    pub fn transfer_time(
        &self,
        image_id: &str,
        cloud: &CloudSite,
        now: SimTime,
    ) -> Result<Duration, RepoError> {
        let image = self
            .lookup(image_id, now)
            .ok_or_else(|| RepoError::NotFound(image_id.to_string()))?;
        if image.variant(cloud.hypervisor).is_none() {
            return Err(RepoError::NoVariant {
                image: image_id.to_string(),
                hypervisor: cloud.hypervisor,
            });
        }
        if self.is_cached(image_id, &cloud.name) {
            return Ok(0);
        }
        let secs = image.size_gb / cloud.image_bandwidth_gb_per_s;
        Ok((secs - 1e-9).ceil().max(0.0) as Duration)
    }

    /// Records a completed transfer; called when a boot finishes.
    pub fn mark_cached(&mut self, image_id: &str, cloud: &str) {
        self.cache.insert((image_id.to_string(), cloud.to_string()));
    }

    pub fn list(&self) -> Vec<CatalogRow> {
        self.catalog
            .values()
            .map(|e| CatalogRow {
                image_id: e.image.image_id.clone(),
                owner: e.image.owner.to_string(),
                size_gb: e.image.size_gb,
                hypervisors: e.image.variants.iter().map(|v| v.hypervisor).collect(),
                available_at: e.available_at,
            })
            .collect()
    }

    pub fn images(&self) -> impl Iterator<Item = &VMImage> {
        self.catalog.values().map(|e| &e.image)
    }
}
