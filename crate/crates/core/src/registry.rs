//! Name-keyed registries of interchangeable strategies.
//!
//! Kernel families, grid builders and conic solvers are each exposed as a
//! trait object; a [`Registry`] maps a runtime name (from a config file or a
//! CLI flag) to a factory producing one.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Loosely typed parameters handed to a factory.
#[derive(Debug, Clone, Default)]
pub struct Params {
    values: BTreeMap<String, f64>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn require(&self, key: &str) -> Result<f64> {
        self.get(key)
            .ok_or_else(|| Error::InvalidParameter(format!("missing parameter `{key}`")))
    }

    pub fn get_or(&self, key: &str, default: f64) -> f64 {
        self.get(key).unwrap_or(default)
    }
}

type Factory<T> = Box<dyn Fn(&Params) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&Params) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn create(&self, name: &str, params: &Params) -> Result<Box<T>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
        })?;
        factory(params)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn area(&self) -> f64;
    }
    struct Square(f64);
    impl Shape for Square {
        fn area(&self) -> f64 {
            self.0 * self.0
        }
    }

    #[test]
    fn creates_by_name_and_rejects_unknown() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("square", |p| Ok(Box::new(Square(p.require("side")?))));
        let sq = reg.create("square", &Params::new().with("side", 3.0)).unwrap();
        assert_eq!(sq.area(), 9.0);
        assert!(matches!(
            reg.create("circle", &Params::new()),
            Err(Error::UnknownStrategy { .. })
        ));
        assert!(reg.create("square", &Params::new()).is_err());
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["square"]);
    }
}
