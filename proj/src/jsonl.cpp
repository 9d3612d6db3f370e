namespace pairrl {}
