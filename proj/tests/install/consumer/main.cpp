#include "lnpde/model/butcher.hpp"

int main() { return lnpde::model::ButcherTableau::of_stage(4).h.size() == 4 ? 0 : 1; }
