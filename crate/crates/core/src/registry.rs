//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Factory<T> = Box<dyn Fn() -> Box<T> + Send + Sync>;

/// Maps strategy names to factories producing boxed trait objects.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &str, factory: impl Fn() -> Box<T> + Send + Sync + 'static) -> &mut Self {
        self.factories.insert(name.to_owned(), Box::new(factory));
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn create_and_unknown() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("hello", || Box::new(Hello));
        assert_eq!(r.create("hello").unwrap().greet(), "hello");
        assert!(r.contains("hello"));
        let err = r.create("bye").err().unwrap();
        assert!(err.to_string().contains("hello"), "{err}");
        assert_eq!(r.names(), vec!["hello"]);
    }
}
