use crate::{Scalar, Tensor5};

/// Named, enumerable parameters. Visiting order is stable and defines the
/// order of gradients, optimizer state, and checkpoint entries.
pub trait Params<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor5<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor5<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

/// Gradients of a scalar objective with respect to every parameter (in
/// visiting order) and to the network input.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    pub params: Vec<(String, Tensor5<T>)>,
    pub input: Tensor5<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor5<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn squared_norm(&self) -> T {
        self.params
            .iter()
            .map(|(_, t)| t.data().iter().map(|&v| v * v).sum::<T>())
            .sum()
    }

    pub fn scale(&mut self, s: T) {
        for (_, t) in &mut self.params {
            t.scale(s);
        }
    }

    pub fn all_zero(&self) -> bool {
        self.params.iter().all(|(_, t)| t.data().iter().all(|v| v.is_zero()))
            && self.input.data().iter().all(|v| v.is_zero())
    }
}
