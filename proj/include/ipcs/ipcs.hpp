#pragma once

#include "ipcs/core.hpp"
#include "ipcs/quadrature.hpp"
#include "ipcs/mesh.hpp"
#include "ipcs/refine.hpp"
#include "ipcs/linalg.hpp"
#include "ipcs/direct.hpp"
#include "ipcs/fem.hpp"
#include "ipcs/cases.hpp"
#include "ipcs/primal.hpp"
#include "ipcs/dual.hpp"
#include "ipcs/estimate.hpp"
#include "ipcs/adapt.hpp"
#include "ipcs/io.hpp"
