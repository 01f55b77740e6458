//! Tool input schemas: a closed subset of JSON Schema (flat objects with
//! string, integer, number, boolean and enum fields).

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    Enum(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub ty: FieldType,
    pub required: bool,
    pub description: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InputSchema {
    fields: Vec<FieldSpec>,
}

impl InputSchema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a field. Panics on a duplicate name, which is a programming error
    /// in a tool definition.
    pub fn field(mut self, name: &str, ty: FieldType, required: bool, description: &str) -> Self {
        assert!(
            self.fields.iter().all(|f| f.name != name),
            "duplicate schema field `{name}`"
        );
        self.fields.push(FieldSpec {
            name: name.to_string(),
            ty,
            required,
            description: (!description.is_empty()).then(|| description.to_string()),
        });
        self
    }

    pub fn required(self, name: &str, ty: FieldType, description: &str) -> Self {
        self.field(name, ty, true, description)
    }

    pub fn optional(self, name: &str, ty: FieldType, description: &str) -> Self {
        self.field(name, ty, false, description)
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    /// Returns the offending field names, in schema order followed by any
    /// unexpected argument names. Empty means valid.
    pub fn violations(&self, args: &Value) -> Vec<String> {
        let Some(map) = args.as_object() else {
            return vec!["<arguments must be an object>".to_string()];
        };
        let mut bad = Vec::new();
        for field in &self.fields {
            match map.get(&field.name) {
                None | Some(Value::Null) if field.required => bad.push(field.name.clone()),
                None | Some(Value::Null) => {}
                Some(v) if !type_matches(&field.ty, v) => bad.push(field.name.clone()),
                Some(_) => {}
            }
        }
        for key in map.keys() {
            if self.fields.iter().all(|f| &f.name != key) {
                bad.push(key.clone());
            }
        }
        bad
    }
}

fn type_matches(ty: &FieldType, v: &Value) -> bool {
    match ty {
        FieldType::String => v.is_string(),
        FieldType::Integer => v.is_i64() || v.is_u64(),
        FieldType::Number => v.is_number(),
        FieldType::Boolean => v.is_boolean(),
        FieldType::Enum(options) => v.as_str().is_some_and(|s| options.iter().any(|o| o == s)),
    }
}

impl Serialize for InputSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut properties = Map::new();
        for f in &self.fields {
            let mut prop = match &f.ty {
                FieldType::String => json!({"type": "string"}),
                FieldType::Integer => json!({"type": "integer"}),
                FieldType::Number => json!({"type": "number"}),
                FieldType::Boolean => json!({"type": "boolean"}),
                FieldType::Enum(options) => json!({"type": "string", "enum": options}),
            };
            if let Some(d) = &f.description {
                prop["description"] = json!(d);
            }
            properties.insert(f.name.clone(), prop);
        }
        let required: Vec<&str> = self
            .fields
            .iter()
            .filter(|f| f.required)
            .map(|f| f.name.as_str())
            .collect();
        json!({"type": "object", "properties": properties, "required": required})
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InputSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Value::deserialize(deserializer)?;
        if raw.get("type").and_then(Value::as_str) != Some("object") {
            return Err(D::Error::custom("input_schema.type must be \"object\""));
        }
        let required: Vec<&str> = raw
            .get("required")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let mut schema = InputSchema::new();
        let empty = Map::new();
        let properties = raw
            .get("properties")
            .and_then(Value::as_object)
            .unwrap_or(&empty);
        for (name, prop) in properties {
            if schema.fields.iter().any(|f| &f.name == name) {
                return Err(D::Error::custom(format!("duplicate field `{name}`")));
            }
            let ty = match (prop.get("type").and_then(Value::as_str), prop.get("enum")) {
                (Some("string"), Some(Value::Array(options))) => FieldType::Enum(
                    options
                        .iter()
                        .map(|o| o.as_str().map(str::to_string))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| {
                            D::Error::custom(format!("field `{name}`: enum values must be strings"))
                        })?,
                ),
                (Some("string"), None) => FieldType::String,
                (Some("integer"), None) => FieldType::Integer,
                (Some("number"), None) => FieldType::Number,
                (Some("boolean"), None) => FieldType::Boolean,
                (other, _) => {
                    return Err(D::Error::custom(format!(
                        "field `{name}`: unsupported type {other:?}"
                    )))
                }
            };
            schema.fields.push(FieldSpec {
                name: name.clone(),
                ty,
                required: required.contains(&name.as_str()),
                description: prop
                    .get("description")
                    .and_then(Value::as_str)
                    .map(str::to_string),
            });
        }
        Ok(schema)
    }
}
