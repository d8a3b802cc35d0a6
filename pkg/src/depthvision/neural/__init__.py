"""Small numpy conv-net stack: ops, autograd, networks, Adam, training, weight files."""
