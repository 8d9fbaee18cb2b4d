#include "pytf/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pytf/container.hpp"

namespace fs = std::filesystem;

namespace pytf {

void write_dataset_dir(const std::vector<SyntheticScene>& scenes, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "scenes");
    std::vector<std::string> ids;
    std::vector<GroundTruthBox> gts;
    for (const SyntheticScene& sc : scenes) {
        ids.push_back(sc.id);
        gts.insert(gts.end(), sc.boxes.begin(), sc.boxes.end());
        write_container_file((fs::path(dir) / "scenes" / (sc.id + ".pytf")).string(),
                             {{"image", sc.image}});
    }
    std::ofstream os(fs::path(dir) / "annotations.json");
    if (!os) throw std::runtime_error("dataset: cannot write annotations in '" + dir + "'");
    os << ground_truth_to_json(gts, ids);
}

std::vector<SyntheticScene> load_dataset_dir(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "annotations.json");
    if (!is) throw std::runtime_error("dataset: cannot open '" + dir + "/annotations.json'");
    std::ostringstream ss;
    ss << is.rdbuf();
    const nlohmann::json root = nlohmann::json::parse(ss.str());
    if (!root.is_object() || !root.contains("images"))
        throw std::runtime_error("dataset: annotations.json must be the object form with 'images'");
    GroundTruthFile gt = ground_truth_from_json(ss.str());

    std::map<std::string, std::vector<GroundTruthBox>> by_image;
    for (const GroundTruthBox& g : gt.boxes) by_image[g.image_id].push_back(g);

    std::vector<SyntheticScene> scenes;
    for (const nlohmann::json& jid : root.at("images")) {
        const std::string id = jid.get<std::string>();
        SyntheticScene sc;
        sc.id = id;
        auto entries = read_container_file((fs::path(dir) / "scenes" / (id + ".pytf")).string());
        bool found = false;
        for (NamedTensor& e : entries)
            if (e.name == "image") {
                sc.image = std::move(e.tensor);
                found = true;
            }
        if (!found) throw std::runtime_error("dataset: scene '" + id + "' has no 'image' tensor");
        if (sc.image.rank() != 3 || sc.image.shape[0] != 3)
            throw std::runtime_error("dataset: scene '" + id + "' image must be [3,H,W], got " +
                                     shape_str(sc.image.shape));
        auto it = by_image.find(id);
        if (it != by_image.end()) sc.boxes = it->second;
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

}  // namespace pytf
