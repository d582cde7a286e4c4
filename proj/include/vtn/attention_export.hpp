#pragma once

#include <string>

#include "vtn/encoder.hpp"

namespace vtn {

// CSV rows `layer,head,token_index,frame_position,weight` for the cls-token
// attention rows of a forward pass; token_index 0 is the cls self weight
// (frame_position -1).
std::string attention_record_csv(const AttentionRecord& record);
void export_attention(const AttentionRecord& record, const std::string& path);

}  // namespace vtn
