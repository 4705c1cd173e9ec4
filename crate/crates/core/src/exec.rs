//! Data-parallel helpers. With the `parallel` feature, [`Exec::Parallel`]
//! runs on the rayon pool; without it every call is sequential. Results are
//! always returned in input order, so both modes produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_indexed<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible map; the first error in input order is returned.
    pub fn try_map<T, U, E, F>(self, items: &[T], f: F) -> Result<Vec<U>, E>
    where
        T: Sync,
        U: Send,
        E: Send,
        F: Fn(&T) -> Result<U, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    /// Runs `f` on disjoint chunks of `0..n` and concatenates in order.
    pub fn chunked<U, F>(self, n: usize, chunk: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(std::ops::Range<usize>) -> Vec<U> + Sync + Send,
    {
        let chunk = chunk.max(1);
        let ranges: Vec<_> = (0..n).step_by(chunk).map(|s| s..(s + chunk).min(n)).collect();
        self.map(&ranges, |r| f(r.clone())).into_iter().flatten().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) % 97;
        assert_eq!(Exec::Sequential.map(&xs, f), Exec::Parallel.map(&xs, f));
        assert_eq!(
            Exec::Sequential.chunked(1000, 37, |r| r.map(|i| i * i).collect()),
            Exec::Parallel.chunked(1000, 37, |r| r.map(|i| i * i).collect())
        );
        let r: Result<Vec<u64>, u64> = Exec::Parallel.try_map(&xs, |&x| if x % 300 == 299 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(299));
    }
}
