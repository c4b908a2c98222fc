//! Stage 2: slot-type classification against refined slot prototypes.

mod entity;
mod losses;
mod prototypes;

pub use entity::EntityEncoder;
pub use losses::{
    candidate_cross_entropy, confusion_target, kl_confusion_loss, normalize_l1,
    predict_slot_type, proto_contrastive_loss, prototype_scores, smooth_distribution,
    KlDirection, PclcHyperparams, REVERSE_KL_FLOOR,
};
pub use prototypes::{Block, PrototypeLayout, PrototypeMatrix, PrototypeNet};
