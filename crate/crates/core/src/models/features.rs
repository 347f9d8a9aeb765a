use serde::{Deserialize, Serialize};

use crate::ingest::Catalog;

/// Layout of the single embedding table: one row per feature, in blocks
/// `[users | items | categories | user side | item side]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_user_side: usize,
    pub n_item_side: usize,
    /// Whether category indicators are model inputs (false for Unawareness).
    pub include_categories: bool,
}

impl FeatureSchema {
    pub fn from_catalog(catalog: &Catalog, include_categories: bool) -> Self {
        Self {
            n_users: catalog.n_users(),
            n_items: catalog.n_items(),
            n_categories: catalog.n_categories(),
            n_user_side: catalog.n_user_features(),
            n_item_side: catalog.n_item_features(),
            include_categories,
        }
    }

    fn category_block(&self) -> usize {
        if self.include_categories {
            self.n_categories
        } else {
            0
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_users + self.n_items + self.category_block() + self.n_user_side + self.n_item_side
    }

    pub fn user_row(&self, u: usize) -> usize {
        u
    }

    pub fn item_row(&self, i: usize) -> usize {
        self.n_users + i
    }

    /// Row of category `c`, or `None` when categories are excluded.
    pub fn category_row(&self, c: usize) -> Option<usize> {
        self.include_categories.then(|| self.n_users + self.n_items + c)
    }

    pub fn user_side_row(&self, f: usize) -> usize {
        self.n_users + self.n_items + self.category_block() + f
    }

    pub fn item_side_row(&self, f: usize) -> usize {
        self.n_users + self.n_items + self.category_block() + self.n_user_side + f
    }
}

/// Active `(row, x)` pairs of a user or an item.
pub type FeatureBag = Vec<(usize, f64)>;

/// Active features of every user and item under a schema.
#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub schema: FeatureSchema,
    pub users: Vec<FeatureBag>,
    pub items: Vec<FeatureBag>,
}

impl FeatureTable {
    pub fn new(catalog: &Catalog, schema: FeatureSchema) -> Self {
        let users = (0..schema.n_users)
            .map(|u| {
                let mut bag = vec![(schema.user_row(u), 1.0)];
                if let Some(fs) = catalog.user_features.get(u) {
                    bag.extend(fs.iter().map(|&f| (schema.user_side_row(f), 1.0)));
                }
                bag
            })
            .collect();
        let items = (0..schema.n_items)
            .map(|i| {
                let mut bag = vec![(schema.item_row(i), 1.0)];
                for &c in &catalog.item_categories[i] {
                    if let Some(r) = schema.category_row(c) {
                        bag.push((r, 1.0));
                    }
                }
                if let Some(fs) = catalog.item_features.get(i) {
                    bag.extend(fs.iter().map(|&f| (schema.item_side_row(f), 1.0)));
                }
                bag
            })
            .collect();
        Self {
            schema,
            users,
            items,
        }
    }

    /// Number of active features of a pair.
    pub fn fields(&self, user: usize, item: usize) -> usize {
        self.users[user].len() + self.items[item].len()
    }

    /// Flattens pairs into padded `(rows, weights, fields)` for an embed node.
    /// Padding uses row 0 with weight 0, which contributes nothing.
    pub fn gather(&self, pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<f64>, usize) {
        let fields = pairs
            .iter()
            .map(|&(u, i)| self.fields(u, i))
            .max()
            .unwrap_or(1);
        let mut rows = Vec::with_capacity(pairs.len() * fields);
        let mut weights = Vec::with_capacity(pairs.len() * fields);
        for &(u, i) in pairs {
            let n = self.fields(u, i);
            for &(r, x) in self.users[u].iter().chain(&self.items[i]) {
                rows.push(r);
                weights.push(x);
            }
            rows.extend(std::iter::repeat_n(0, fields - n));
            weights.extend(std::iter::repeat_n(0.0, fields - n));
        }
        (rows, weights, fields)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        Catalog {
            user_ids: vec!["a".into(), "b".into()],
            item_ids: vec!["x".into(), "y".into(), "z".into()],
            category_names: vec!["c0".into(), "c1".into()],
            item_categories: vec![vec![0], vec![1], vec![0, 1]],
            item_category_weights: vec![None; 3],
            user_feature_names: vec!["age=1".into()],
            user_features: vec![vec![0], vec![]],
            ..Catalog::default()
        }
    }

    #[test]
    fn schemas_differ_by_the_category_block() {
        let c = catalog();
        let full = FeatureSchema::from_catalog(&c, true);
        let blind = FeatureSchema::from_catalog(&c, false);
        assert_eq!(full.n_rows() - blind.n_rows(), c.n_categories());
        let tf = FeatureTable::new(&c, full);
        let tb = FeatureTable::new(&c, blind);
        assert_eq!(tf.items[2].len(), 3);
        assert_eq!(tb.items[2].len(), 1);
        assert_eq!(tf.users[0], vec![(0, 1.0), (full.user_side_row(0), 1.0)]);
    }

    #[test]
    fn gather_pads_with_zero_weights() {
        let c = catalog();
        let t = FeatureTable::new(&c, FeatureSchema::from_catalog(&c, true));
        let (rows, w, f) = t.gather(&[(1, 0), (0, 2)]);
        assert_eq!(f, 5);
        assert_eq!(rows.len(), 10);
        assert_eq!(&w[..5], &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(w[5..].iter().all(|&x| x == 1.0));
    }
}
