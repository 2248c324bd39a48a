#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anacto/boxes.hpp"

namespace anacto {

// Per-frame annotation stream, the shape of what a hand-object interaction
// detector plus an object detector would emit. Boxes are 4-element
// center-format arrays in native pixels of that frame.
struct HandAnnotation {
  Box box{};
  double score = 1.0;
  std::string side = "right";
  bool contact_state = false;
};

struct ObjectAnnotation {
  int category = 0;
  Box box{};
  double score = 0.0;
};

struct ActiveObjectAnnotation {
  Box box{};
  int category = 0;
};

struct AnnotationRecord {
  int frame_index = 0;
  std::vector<HandAnnotation> hands;            // at most 2
  std::vector<ObjectAnnotation> objects;        // one entry per present category
  std::vector<ActiveObjectAnnotation> active_objects;  // at most 2, slot-ordered
};

// annotations.jsonl: one JSON object per line, snake_case keys.
void write_annotations_jsonl(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> read_annotations_jsonl(const std::filesystem::path& path);

std::string annotation_to_json(const AnnotationRecord& rec);
AnnotationRecord annotation_from_json(const std::string& line);

// Collects the record's active objects into the two hand slots, in stream
// order. More than two entries is a data error.
BoxPair active_objects_to_boxpair(const AnnotationRecord& rec);

// Builds the fixed-slot detector view of a record: one slot per category,
// keeping the highest-scoring entry when a category repeats.
DetectionSet record_to_detections(const AnnotationRecord& rec, int num_categories);

}  // namespace anacto
