from .pomdp_model import Pomdp, belief_update
from .ramcp_agent import RamcpAgent, run_trial
