//! Slot inventory of the SNIPS NLU benchmark (7 domains, 39 slot labels),
//! in the label spelling of its common cross-domain BIO distribution.

use super::SlotSchema;

pub const DOMAINS: [(&str, &[&str]); 7] = [
    (
        "AddToPlaylist",
        &["music_item", "playlist_owner", "entity_name", "playlist", "artist"],
    ),
    (
        "BookRestaurant",
        &[
            "city",
            "facility",
            "timeRange",
            "restaurant_name",
            "country",
            "cuisine",
            "restaurant_type",
            "served_dish",
            "party_size_number",
            "poi",
            "sort",
            "spatial_relation",
            "state",
            "party_size_description",
        ],
    ),
    (
        "GetWeather",
        &[
            "city",
            "state",
            "timeRange",
            "current_location",
            "country",
            "spatial_relation",
            "geographic_poi",
            "condition_temperature",
            "condition_description",
        ],
    ),
    (
        "PlayMusic",
        &[
            "genre",
            "music_item",
            "service",
            "year",
            "playlist",
            "album",
            "sort",
            "track",
            "artist",
        ],
    ),
    (
        "RateBook",
        &[
            "object_part_of_series_type",
            "object_select",
            "rating_value",
            "object_name",
            "object_type",
            "rating_unit",
            "best_rating",
        ],
    ),
    ("SearchCreativeWork", &["object_name", "object_type"]),
    (
        "SearchScreeningEvent",
        &[
            "timeRange",
            "movie_type",
            "object_location_type",
            "object_type",
            "location_name",
            "spatial_relation",
            "movie_name",
        ],
    ),
];

pub fn reference_schema() -> SlotSchema {
    SlotSchema::from_slot_lists(DOMAINS.iter().map(|(d, s)| (*d, s.to_vec())))
        .expect("static schema is valid")
}
