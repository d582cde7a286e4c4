#include "vtn/attention_export.hpp"

#include "vtn/csv.hpp"

namespace vtn {

std::string attention_record_csv(const AttentionRecord& record) {
  std::string out = "layer,head,token_index,frame_position,weight\n";
  for (int64_t layer = 0; layer < record.layers; ++layer)
    for (int64_t head = 0; head < record.heads; ++head) {
      const auto& row = record.cls_row(layer, head);
      for (int64_t token = 0; token < record.tokens; ++token) {
        // token 0 is the cls token's self weight; it has no frame
        const int64_t frame = token == 0 ? -1 : record.frame_positions[token - 1];
        out += std::to_string(layer) + "," + std::to_string(head) + "," +
               std::to_string(token) + "," + std::to_string(frame) + "," +
               format_double(row[token]) + "\n";
      }
    }
  return out;
}

void export_attention(const AttentionRecord& record, const std::string& path) {
  if (record.cls_rows.empty())
    throw std::invalid_argument("export_attention: record is empty");
  write_text_file(path, attention_record_csv(record));
}

}  // namespace vtn
