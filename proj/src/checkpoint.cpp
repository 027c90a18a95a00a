#include "dartlab/checkpoint.hpp"

#include <sstream>

#include "dartlab/csvio.hpp"
#include "dartlab/errors.hpp"

namespace dartlab {

static const char* kMagic = "dartlab-params v1";

void write_checkpoint(const PatchModel& model, const std::string& path) {
    std::string body = kMagic;
    body += '\n';
    body += std::to_string(model.C) + " " + std::to_string(model.d) + " " +
            format_double(model.q) + "\n";
    for (int c = 0; c < model.C; ++c) {
        for (int j = 0; j < model.d; ++j) {
            if (j) body += ' ';
            body += format_double(model.W(c, j));
        }
        body += '\n';
    }
    write_text_file(path, body);
}

PatchModel read_checkpoint(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic) throw IoError("not a dartlab-params v1 file: " + path);
    PatchModel m;
    in >> m.C >> m.d >> m.q;
    if (!in || m.C < 1 || m.d < 1) throw IoError("corrupt checkpoint header: " + path);
    m.W.resize(m.C, m.d);
    for (int c = 0; c < m.C; ++c)
        for (int j = 0; j < m.d; ++j)
            if (!(in >> m.W(c, j))) throw IoError("truncated checkpoint body: " + path);
    return m;
}

}  // namespace dartlab
