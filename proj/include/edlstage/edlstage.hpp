#pragma once

#include "edlstage/baselines.hpp"
#include "edlstage/data.hpp"
#include "edlstage/dirichlet.hpp"
#include "edlstage/edl.hpp"
#include "edlstage/error.hpp"
#include "edlstage/gradcheck.hpp"
#include "edlstage/eval.hpp"
#include "edlstage/nn.hpp"
#include "edlstage/pipeline.hpp"
#include "edlstage/rm.hpp"
#include "edlstage/sim.hpp"
#include "edlstage/special.hpp"
