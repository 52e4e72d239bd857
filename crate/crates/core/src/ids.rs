//! Index newtypes shared across modules.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! index_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(index: usize) -> Self {
                Self(u32::try_from(index).expect("index exceeds u32 range"))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_type!(
    /// A node of the commonsense graph.
    NodeId
);
index_type!(
    /// An entry of the word vocabulary.
    TokenId
);
index_type!(
    /// An entry of the keyword vocabulary (also the output class index of the predictor).
    KeywordId
);
index_type!(
    /// A deduplicated utterance in the response pool.
    UtteranceId
);
index_type!(RelationId);
