#include "xccd/tokenizer.hpp"

namespace xccd {

CharTokenizer::CharTokenizer() {
    pieces_ = {"<pad>", "<bos>", "<eos>", "<unk>", "Yes", "No"};
    auto add_char = [this](char c) {
        char_to_id_[c] = static_cast<int>(pieces_.size());
        pieces_.emplace_back(1, c);
    };
    for (char c = 'a'; c <= 'z'; ++c) add_char(c);
    for (char c = '0'; c <= '9'; ++c) add_char(c);
    for (char c : {' ', '\n', '.', ',', ':', ';', '!', '?', '(', ')', '{',
                   '}', '<', '>', '"', '\'', '-', '_', '=', '+', '*', '/'}) {
        add_char(c);
    }
}

std::vector<int> CharTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        if (text.compare(i, 3, "Yes") == 0) {
            ids.push_back(kYes);
            i += 3;
            continue;
        }
        if (text.compare(i, 2, "No") == 0) {
            ids.push_back(kNo);
            i += 2;
            continue;
        }
        char c = text[i];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        auto it = char_to_id_.find(c);
        ids.push_back(it == char_to_id_.end() ? kUnk : it->second);
        ++i;
    }
    return ids;
}

std::string CharTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kEos) break;
        if (id == kPad || id == kBos || id == kUnk) continue;
        out += pieces_.at(static_cast<std::size_t>(id));
    }
    return out;
}

}  // namespace xccd
