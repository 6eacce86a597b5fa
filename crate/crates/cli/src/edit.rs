//! In-place scenario edits that keep the user's comments and layout.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use toml_edit::{Array, ArrayOfTables, DocumentMut, InlineTable, Item, Table, Value};

use crate::Failure;
use cloudsched::Scenario;

pub struct ScenarioDoc {
    path: PathBuf,
    doc: DocumentMut,
}

impl ScenarioDoc {
    pub fn open(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(Failure::Runtime)?;
        let doc = text
            .parse::<DocumentMut>()
            .with_context(|| format!("cannot parse {}", path.display()))
            .map_err(Failure::Invalid)?;
        Ok(Self {
            path: path.to_path_buf(),
            doc,
        })
    }

    /// Appends `value` to the array of tables at dotted `path`.
    pub fn push<T: Serialize>(&mut self, path: &str, value: &T) -> Result<(), Failure> {
        let entry = toml_edit::ser::to_document(value)
            .map_err(|e| Failure::Invalid(e.into()))?
            .as_table()
            .clone();
        let entry = flatten_nested(entry);
        let (parents, last) = match path.rsplit_once('.') {
            Some((p, l)) => (p.split('.').collect::<Vec<_>>(), l),
            None => (Vec::new(), path),
        };
        let mut table = self.doc.as_table_mut();
        for key in parents {
            table = table
                .entry(key)
                .or_insert_with(|| {
                    let mut t = Table::new();
                    t.set_implicit(true);
                    Item::Table(t)
                })
                .as_table_mut()
                .ok_or_else(|| layout(key))?;
        }
        table
            .entry(last)
            .or_insert_with(|| Item::ArrayOfTables(ArrayOfTables::new()))
            .as_array_of_tables_mut()
            .ok_or_else(|| layout(last))?
            .push(entry);
        Ok(())
    }

    fn find_named(
        &mut self,
        array: &str,
        key: &str,
        name: &str,
    ) -> Result<(usize, &mut ArrayOfTables), Failure> {
        let tables = self
            .doc
            .get_mut(array)
            .and_then(Item::as_array_of_tables_mut)
            .ok_or_else(|| Failure::Invalid(anyhow!("scenario has no {array}")))?;
        let idx = tables
            .iter()
            .position(|t| t.get(key).and_then(Item::as_str) == Some(name))
            .ok_or_else(|| {
                Failure::Invalid(anyhow!("no entry in {array} with {key} = {name:?}"))
            })?;
        Ok((idx, tables))
    }

    pub fn remove_named(&mut self, array: &str, key: &str, name: &str) -> Result<(), Failure> {
        let (idx, tables) = self.find_named(array, key, name)?;
        tables.remove(idx);
        Ok(())
    }

    pub fn set_named(
        &mut self,
        array: &str,
        key: &str,
        name: &str,
        field: &str,
        value: &str,
    ) -> Result<(), Failure> {
        let (idx, tables) = self.find_named(array, key, name)?;
        let t = tables.get_mut(idx).expect("index just found");
        t[field] = toml_edit::value(value);
        Ok(())
    }

    /// Writes the edited file, but only if it is still a valid scenario.
    pub fn save(self) -> Result<(), Failure> {
        let text = self.doc.to_string();
        let scenario = Scenario::from_toml(&text)?;
        scenario.validate()?;
        fs::write(&self.path, text)?;
        Ok(())
    }
}

fn layout(key: &str) -> Failure {
    Failure::Invalid(anyhow!(
        "`{key}` is not laid out as a table; edit it by hand"
    ))
}

/// Nested tables become inline so that the entry stays one block.
fn flatten_nested(table: Table) -> Table {
    let mut out = Table::new();
    for (k, item) in table {
        let item = match item {
            Item::Table(t) => Item::Value(Value::InlineTable(to_inline(t))),
            Item::ArrayOfTables(a) => {
                let mut arr = Array::new();
                for t in a {
                    arr.push(to_inline(t));
                }
                Item::Value(Value::Array(arr))
            }
            other => other,
        };
        out.insert(&k, item);
    }
    out
}

fn to_inline(t: Table) -> InlineTable {
    let mut inline = t.into_inline_table();
    inline.fmt();
    inline
}
