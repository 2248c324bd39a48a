#include "anacto/annotations.hpp"

#include <fstream>

#include <json.hpp>

#include "anacto/errors.hpp"

namespace anacto {

namespace {

using nlohmann::json;

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("annotation: box must be a 4-element array");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::string annotation_to_json(const AnnotationRecord& rec) {
  json j;
  j["frame_index"] = rec.frame_index;
  json hands = json::array();
  for (const HandAnnotation& h : rec.hands) {
    hands.push_back({{"box", box_to_json(h.box)},
                     {"score", h.score},
                     {"side", h.side},
                     {"contact_state", h.contact_state}});
  }
  j["hands"] = std::move(hands);
  json objects = json::array();
  for (const ObjectAnnotation& o : rec.objects) {
    objects.push_back({{"category", o.category}, {"box", box_to_json(o.box)}, {"score", o.score}});
  }
  j["objects"] = std::move(objects);
  json actives = json::array();
  for (const ActiveObjectAnnotation& a : rec.active_objects) {
    actives.push_back({{"box", box_to_json(a.box)}, {"category", a.category}});
  }
  j["active_objects"] = std::move(actives);
  return j.dump();
}

AnnotationRecord annotation_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("annotation: JSON parse error: ") + e.what());
  }
  AnnotationRecord rec;
  try {
    rec.frame_index = j.at("frame_index").get<int>();
    for (const json& h : j.at("hands")) {
      HandAnnotation hand;
      hand.box = box_from_json(h.at("box"));
      hand.score = h.at("score").get<double>();
      hand.side = h.at("side").get<std::string>();
      hand.contact_state = h.at("contact_state").get<bool>();
      rec.hands.push_back(std::move(hand));
    }
    for (const json& o : j.at("objects")) {
      ObjectAnnotation obj;
      obj.category = o.at("category").get<int>();
      obj.box = box_from_json(o.at("box"));
      obj.score = o.at("score").get<double>();
      rec.objects.push_back(std::move(obj));
    }
    for (const json& a : j.at("active_objects")) {
      ActiveObjectAnnotation act;
      act.box = box_from_json(a.at("box"));
      act.category = a.at("category").get<int>();
      rec.active_objects.push_back(std::move(act));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("annotation: schema error: ") + e.what());
  }
  if (rec.hands.size() > 2) throw DataError("annotation: more than two hands");
  if (rec.active_objects.size() > 2) throw DataError("annotation: more than two active objects");
  return rec;
}

void write_annotations_jsonl(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_annotations_jsonl: cannot open " + path.string());
  for (const AnnotationRecord& rec : records) out << annotation_to_json(rec) << '\n';
  if (!out) throw DataError("write_annotations_jsonl: write failed for " + path.string());
}

std::vector<AnnotationRecord> read_annotations_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_annotations_jsonl: cannot open " + path.string());
  std::vector<AnnotationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(annotation_from_json(line));
  }
  return records;
}

BoxPair active_objects_to_boxpair(const AnnotationRecord& rec) {
  if (rec.active_objects.size() > 2) throw DataError("active_objects_to_boxpair: more than two entries");
  BoxPair p;
  for (std::size_t i = 0; i < rec.active_objects.size(); ++i) {
    if (rec.active_objects[i].box.empty()) continue;
    p.boxes[i] = rec.active_objects[i].box;
    p.valid[i] = true;
  }
  return p;
}

DetectionSet record_to_detections(const AnnotationRecord& rec, int num_categories) {
  DetectionSet set(static_cast<std::size_t>(num_categories));
  for (const ObjectAnnotation& o : rec.objects) {
    if (o.category < 0 || o.category >= num_categories) {
      throw DataError("record_to_detections: category " + std::to_string(o.category) + " out of range");
    }
    Detection& slot = set.slots[static_cast<std::size_t>(o.category)];
    if (o.score > slot.score) slot = Detection{o.box, o.score};
  }
  return set;
}

}  // namespace anacto
